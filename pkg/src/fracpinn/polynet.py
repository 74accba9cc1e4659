"""Small feed-forward networks with orthogonal-polynomial blocks.

Every layer propagates a *jet* ``(value, d/dx, d^2/dx^2)`` of its activations
with respect to the scalar network input, so integer-order derivatives of the
output are exact.  Gradients with respect to the parameters are obtained by
reverse accumulation through the jet recurrences, which includes the mixed
terms ``d/dtheta (d phi / dx)`` needed by physics-informed losses.

Polynomial derivatives inside the blocks use operational matrices:
``V'(x) = A V(x)`` for the vector ``V = [p_0, ..., p_m]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

__all__ = [
    "DerivativeBundle",
    "LayerSpec",
    "Network",
    "Tape",
    "build_network",
    "chebyshev_derivative_matrix",
    "chebyshev_eval",
    "forward",
    "forward_with_input_derivatives",
    "init_parameters",
    "legendre_derivative_matrix",
    "legendre_eval",
    "load_checkpoint",
    "parameter_gradient",
    "save_checkpoint",
]

CHECKPOINT_FORMAT = "fracpinn-network"
CHECKPOINT_VERSION = 1

LAYER_KINDS = ("dense", "legendre_block", "chebyshev_block")
ACTIVATIONS = ("tanh", "identity")


# {{{ polynomials


def legendre_eval(n_max: int, x: float | np.ndarray) -> np.ndarray:
    """Legendre polynomials ``P_0 .. P_{n_max}`` stacked along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    x = np.clip(x, -1.0, 1.0) if np.all(np.abs(x) <= 1.0 + 1.0e-12) else x

    v = np.empty((*x.shape, n_max + 1))
    v[..., 0] = 1.0
    if n_max >= 1:
        v[..., 1] = x
    for n in range(1, n_max):
        v[..., n + 1] = ((2 * n + 1) * x * v[..., n] - n * v[..., n - 1]) / (n + 1)
    return v


def chebyshev_eval(n_max: int, x: float | np.ndarray) -> np.ndarray:
    """Chebyshev polynomials ``T_0 .. T_{n_max}`` stacked along the last axis."""
    x = np.asarray(x, dtype=np.float64)

    v = np.empty((*x.shape, n_max + 1))
    v[..., 0] = 1.0
    if n_max >= 1:
        v[..., 1] = x
    for n in range(1, n_max):
        v[..., n + 1] = 2.0 * x * v[..., n] - v[..., n - 1]
    return v


def legendre_derivative_matrix(m: int) -> np.ndarray:
    """Matrix ``A`` of size ``(m + 1, m + 1)`` with ``d/dx [P_0..P_m] = A [P_0..P_m]``.

    ``a[i, j] = 2 j + 1`` whenever ``i - j`` is a positive odd integer.
    """
    if m < 0:
        raise ValueError(f"order must be non-negative: {m}")

    i, j = np.indices((m + 1, m + 1))
    k = i - j
    return np.where((k > 0) & (k % 2 == 1), 2.0 * j + 1.0, 0.0)


def chebyshev_derivative_matrix(m: int) -> np.ndarray:
    """Matrix ``C`` of size ``(m + 1, m + 1)`` with ``d/dx [T_0..T_m] = C [T_0..T_m]``."""
    if m < 0:
        raise ValueError(f"order must be non-negative: {m}")

    i, j = np.indices((m + 1, m + 1))
    k = i - j
    c = np.where((k > 0) & (k % 2 == 1), 2.0 * i, 0.0)
    c[:, 0] /= 2.0
    return c


_POLYNOMIALS = {
    "legendre_block": (legendre_eval, legendre_derivative_matrix),
    "chebyshev_block": (chebyshev_eval, chebyshev_derivative_matrix),
}


# }}}


# {{{ layer specs


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_width: int
    out_width: int
    activation: str = "identity"
    per_output_affine: bool = False

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_width < 1 or self.out_width < 1:
            raise ValueError(f"layer widths must be positive: {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def affine_shape(self) -> tuple[int, int]:
        """Shape ``(rows, in_width)`` of the trainable weight matrix."""
        if self.kind == "dense" or self.per_output_affine:
            return self.out_width, self.in_width
        return 1, self.in_width

    @property
    def n_params(self) -> int:
        rows, cols = self.affine_shape
        return rows * cols + rows

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "in_width": self.in_width,
            "out_width": self.out_width,
            "activation": self.activation,
            "per_output_affine": self.per_output_affine,
        }


def build_network(
    architecture: Sequence[tuple[str, int]],
    domain: tuple[float, float] = (-1.0, 1.0),
    *,
    seed: int | None = 0,
    per_output_affine: bool = False,
) -> Network:
    """Build a scalar-input network from ``(kind, width)`` pairs.

    *kind* is one of ``"legendre"``, ``"chebyshev"``, ``"tanh"`` or
    ``"linear"``; e.g. ``[("legendre", 16), ("tanh", 32), ("linear", 1)]``.
    """
    aliases = {
        "legendre": ("legendre_block", "identity"),
        "chebyshev": ("chebyshev_block", "identity"),
        "tanh": ("dense", "tanh"),
        "linear": ("dense", "identity"),
    }

    layers = []
    width = 1
    for name, out in architecture:
        if name not in aliases:
            raise ValueError(f"unknown layer alias {name!r}")
        kind, act = aliases[name]
        layers.append(
            LayerSpec(kind, width, int(out), act, per_output_affine=per_output_affine)
        )
        width = int(out)

    net = Network(tuple(layers), np.zeros(sum(s.n_params for s in layers)), domain)
    if seed is not None:
        net = net.with_params(init_parameters(net, seed))
    return net


# }}}


# {{{ jets


@dataclass(frozen=True)
class DerivativeBundle:
    """Network outputs and their derivatives with respect to the input.

    Arrays have shape ``(batch, output_dim)``; derivatives above the
    requested order are ``None``.
    """

    value: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None

    def __getitem__(self, k: int) -> np.ndarray | None:
        return (self.value, self.d1, self.d2)[k]


@dataclass
class Tape:
    """Intermediate jets recorded by :meth:`Network.jets` for the pullback."""

    order: int
    records: list[Any] = field(default_factory=list)


def _pointwise_jet(
    z: list[np.ndarray], g: Sequence[np.ndarray], order: int
) -> list[np.ndarray]:
    out = [g[0]]
    if order >= 1:
        out.append(g[1] * z[1])
    if order >= 2:
        out.append(g[2] * z[1] ** 2 + g[1] * z[2])
    return out


def _pointwise_pullback(
    z: list[np.ndarray], g: Sequence[np.ndarray], adj: list[np.ndarray], order: int
) -> list[np.ndarray]:
    # adjoints of y0 = g(z0), y1 = g' z1, y2 = g'' z1^2 + g' z2
    dz0 = adj[0] * g[1]
    if order >= 1:
        dz0 = dz0 + adj[1] * g[2] * z[1]
        dz1 = adj[1] * g[1]
    if order >= 2:
        dz0 = dz0 + adj[2] * (g[3] * z[1] ** 2 + g[2] * z[2])
        dz1 = dz1 + 2.0 * adj[2] * g[2] * z[1]
        dz2 = adj[2] * g[1]
        return [dz0, dz1, dz2]
    if order >= 1:
        return [dz0, dz1]
    return [dz0]


def _tanh_derivatives(z0: np.ndarray, order: int) -> list[np.ndarray]:
    t = np.tanh(z0)
    s = 1.0 - t * t
    return [t, s, -2.0 * t * s, -2.0 * s * (1.0 - 3.0 * t * t)]


def _identity_derivatives(z0: np.ndarray, order: int) -> list[np.ndarray]:
    zeros = np.zeros_like(z0)
    return [z0, np.ones_like(z0), zeros, zeros]


def _polynomial_derivatives(kind: str, u: np.ndarray, m: int, order: int) -> list[np.ndarray]:
    evaluate, dmatrix = _POLYNOMIALS[kind]
    v = evaluate(m - 1, u)
    at = dmatrix(m - 1).T

    g = [v]
    # one derivative beyond the propagated order is needed by the pullback
    for _ in range(order + 2):
        g.append(g[-1] @ at)
    return g + [None] * (4 - len(g))


# }}}


# {{{ network


@dataclass(frozen=True)
class Network:
    """Feed-forward network on a scalar input.

    The physical input ``tau`` in ``domain = (a, b)`` is mapped affinely to
    ``[-1, 1]`` before the first layer; reported input derivatives are with
    respect to ``tau``.
    """

    layers: tuple[LayerSpec, ...]
    parameters: np.ndarray
    domain: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self) -> None:
        layers = tuple(self.layers)
        for prev, cur in zip(layers, layers[1:]):
            if prev.out_width != cur.in_width:
                raise ValueError(f"layer widths do not chain: {prev} -> {cur}")
        if layers and layers[0].in_width != 1:
            raise ValueError("networks take a scalar input")

        p = np.array(self.parameters, dtype=np.float64).reshape(-1)
        expected = sum(s.n_params for s in layers)
        if p.size != expected:
            raise ValueError(f"expected {expected} parameters, got {p.size}")
        p.flags.writeable = False

        a, b = (float(v) for v in self.domain)
        if not b > a:
            raise ValueError(f"invalid input domain {self.domain}")

        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "parameters", p)
        object.__setattr__(self, "domain", (a, b))

    @property
    def n_params(self) -> int:
        return self.parameters.size

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_width

    def with_params(self, parameters: np.ndarray) -> Network:
        return Network(self.layers, parameters, self.domain)

    def unpack(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-layer ``(W, b)`` views into the flat parameter vector."""
        out = []
        offset = 0
        for spec in self.layers:
            rows, cols = spec.affine_shape
            w = self.parameters[offset : offset + rows * cols].reshape(rows, cols)
            offset += rows * cols
            b = self.parameters[offset : offset + rows]
            offset += rows
            out.append((w, b))
        return out

    # {{{ evaluation

    def jets(self, tau: np.ndarray, order: int = 0) -> tuple[DerivativeBundle, Tape]:
        """Evaluate outputs and input derivatives up to *order* at the points *tau*."""
        if order not in (0, 1, 2):
            raise ValueError(f"input derivatives of order {order} are not supported")

        tau = np.asarray(tau, dtype=np.float64).reshape(-1, 1)
        a, b = self.domain
        scale = 2.0 / (b - a)

        x = [scale * (tau - a) - 1.0]
        if order >= 1:
            x.append(np.full_like(tau, scale))
        if order >= 2:
            x.append(np.zeros_like(tau))

        tape = Tape(order)
        for index, (spec, (w, bias)) in enumerate(zip(self.layers, self.unpack())):
            z = [x[0] @ w.T + bias] + [xk @ w.T for xk in x[1:]]

            if spec.kind == "dense":
                if spec.activation == "tanh":
                    g = _tanh_derivatives(z[0], order)
                else:
                    g = _identity_derivatives(z[0], order)
                y = _pointwise_jet(z, g, order)
                tape.records.append((x, z, g, None))
            else:
                # u = tanh(s), then polynomial degrees 0..m-1 of u
                gt = _tanh_derivatives(z[0], order)
                u = _pointwise_jet(z, gt, order)
                if spec.per_output_affine:
                    gp = _polynomial_derivatives(spec.kind, u[0], spec.out_width, order)
                    gp = [None if gk is None else _diagonal(gk) for gk in gp]
                else:
                    gp = _polynomial_derivatives(spec.kind, u[0][:, 0], spec.out_width, order)
                y = _pointwise_jet(u, gp, order)
                tape.records.append((x, z, gt, (u, gp)))

            if not all(np.all(np.isfinite(yk)) for yk in y):
                raise FloatingPointError(f"non-finite activation in layer {index}")
            x = y

        bundle = DerivativeBundle(*x, *([None] * (3 - len(x))))
        return bundle, tape

    def pullback(self, tape: Tape, cotangent: Sequence[np.ndarray | None]) -> np.ndarray:
        """Gradient of ``sum(cotangent[k] * jet[k])`` with respect to the parameters."""
        order = tape.order
        last = tape.records[-1]
        shape = (last[1][0].shape[0], self.output_dim)

        adj = []
        for k in range(order + 1):
            c = cotangent[k] if k < len(cotangent) else None
            adj.append(np.zeros(shape) if c is None else np.broadcast_to(
                np.asarray(c, dtype=np.float64).reshape(shape[0], -1), shape))

        grads = []
        for spec, (w, _), (x, z, gt, poly) in zip(
            reversed(self.layers), reversed(self.unpack()), reversed(tape.records)
        ):
            if poly is None:
                dz = _pointwise_pullback(z, gt, adj, order)
            else:
                ub, gp = poly
                du = _pointwise_pullback(ub, gp, adj, order)
                if not spec.per_output_affine:
                    du = [d.sum(axis=1, keepdims=True) for d in du]
                dz = _pointwise_pullback(z, gt, du, order)

            dw = sum(dzk.T @ xk for dzk, xk in zip(dz, x))
            db = dz[0].sum(axis=0)
            grads.append(np.concatenate([dw.reshape(-1), db]))
            adj = [dzk @ w for dzk in dz]

        grad = np.concatenate(grads[::-1])
        bad = np.flatnonzero(~np.isfinite(grad))
        if bad.size:
            raise FloatingPointError(f"non-finite gradient at parameter index {bad[0]}")
        return grad

    def __call__(self, tau: np.ndarray) -> np.ndarray:
        return self.jets(tau, 0)[0].value

    # }}}


def _diagonal(g: np.ndarray) -> np.ndarray:
    # per-output mode: column k uses degree k of its own argument u_k
    return np.diagonal(g, axis1=-2, axis2=-1)


def forward(net: Network, x: float | np.ndarray) -> np.ndarray:
    """Network outputs at *x*; a scalar input yields a vector of outputs."""
    out = net(np.atleast_1d(x))
    return out[0] if np.ndim(x) == 0 else out


def forward_with_input_derivatives(
    net: Network, x: float | np.ndarray, order: int = 1
) -> DerivativeBundle:
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    bundle, _ = net.jets(np.atleast_1d(x), order)
    return bundle


def parameter_gradient(
    net: Network,
    x: float | np.ndarray,
    cotangent: Sequence[np.ndarray | float | None],
    order: int | None = None,
) -> np.ndarray:
    """Vector-Jacobian product of the jet map ``theta -> (phi, phi', phi'')``.

    *cotangent* holds ``dObjective/dphi``, ``dObjective/dphi'`` and
    ``dObjective/dphi''`` at the points *x* (``None`` entries are zero).
    Contributions of several batches are combined by summing the results.
    """
    if order is None:
        order = max(k for k, c in enumerate(cotangent) if c is not None) if any(
            c is not None for c in cotangent) else 0
    _, tape = net.jets(np.atleast_1d(x), order)
    return net.pullback(tape, cotangent)


def init_parameters(net: Network, seed: int) -> np.ndarray:
    """Normal weights with standard deviation ``1 / sqrt(fan_in)``, zero biases."""
    rng = np.random.default_rng(seed)

    chunks = []
    for spec in net.layers:
        rows, cols = spec.affine_shape
        chunks.append(rng.standard_normal(rows * cols) / math.sqrt(cols))
        chunks.append(np.zeros(rows))
    return np.concatenate(chunks)


# }}}


# {{{ checkpoints


def network_to_dict(net: Network) -> dict[str, Any]:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "domain": list(net.domain),
        "layers": [s.to_dict() for s in net.layers],
        "parameters": [float(p) for p in net.parameters],
    }


def network_from_dict(data: dict[str, Any]) -> Network:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a network checkpoint: format={data.get('format')!r}")
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")

    layers = tuple(LayerSpec(**s) for s in data["layers"])
    return Network(layers, np.array(data["parameters"], dtype=np.float64), tuple(data["domain"]))


def save_checkpoint(net: Network, path) -> None:
    # json writes floats with repr(), which round-trips exactly
    with open(path, "w", encoding="utf-8") as outf:
        json.dump(network_to_dict(net), outf, indent=1)


def load_checkpoint(path) -> Network:
    with open(path, encoding="utf-8") as inf:
        return network_from_dict(json.load(inf))


# }}}
