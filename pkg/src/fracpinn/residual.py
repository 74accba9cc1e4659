"""Collocation residuals and physics-informed losses.

A problem is compiled against a grid once: its Caputo matrices are assembled,
its expressions are differentiated symbolically with respect to every state
slot, and the points at which each state has to be evaluated (grid nodes and
delayed arguments) are fixed.  The resulting :class:`ResidualModel` then maps
approximators (networks or exact-solution surrogates) to residuals, losses,
and loss gradients with respect to the network parameters.

Slot names used in expressions:

``y``, ``dy``, ``d2y``
    state, first and second derivative at the collocation node.
``Dy``
    leading Caputo derivative of the state's order (matrix-vector product).
``y_d0``, ``dy_d0``, ...
    state or derivative at the delayed argument ``delta_0(t)``.

Multi-state systems number the states from 1: ``y1``, ``dy2``, ``Dy1``, ...
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import sympy as sp

from fracpinn.caputo import CaputoMatrix, FractionalOrder, Grid, assemble_matrix
from fracpinn.expressions import (
    T,
    ExpressionError,
    compile_expression,
    derivatives_in_t,
    parse,
    parse_slot,
    slot_symbols,
)
from fracpinn.polynet import DerivativeBundle

__all__ = [
    "DaeEquation",
    "DaeSystem",
    "ExactSurrogate",
    "FddeProblem",
    "HistoryError",
    "LossConfig",
    "ResidualModel",
    "boundary_residuals",
    "dae_loss",
    "dae_residuals",
    "exact_surrogates",
    "fdde_loss",
    "residual_vector",
]

REDUCTIONS = ("paper_l2_norm", "mean_square")


class HistoryError(ValueError):
    """A delayed argument left the domain and no history was supplied."""


# {{{ problem types


def _expr(value: str | sp.Expr, key: str) -> sp.Expr:
    return parse(value, key=key) if isinstance(value, str) else sp.sympify(value)


@dataclass(frozen=True)
class LossConfig:
    """Residual weight ``lam`` and residual reduction (norm or mean square)."""

    lam: float = 10.0
    reduction: str = "paper_l2_norm"

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive: {self.lam}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"unknown reduction {self.reduction!r}")


@dataclass(frozen=True)
class FddeProblem:
    """``D^q y(t) = chi(t, y, y', ..., y(delta(t))) + forcing(t)`` on ``[a, b]``.

    *chi* is written in the slots ``y``, ``dy``, ``d2y``, ``y_d0``, ...;
    *forcing* and *delays* are functions of ``t`` only.  *history* gives the
    solution for arguments below ``a``.
    """

    name: str
    domain: tuple[float, float]
    order: FractionalOrder
    chi: sp.Expr
    forcing: sp.Expr = sp.Integer(0)
    delays: tuple[sp.Expr, ...] = ()
    initial_values: tuple[float, ...] = (0.0,)
    history: sp.Expr | None = None
    exact: sp.Expr | None = None
    architecture: tuple[tuple[str, int], ...] = ()
    description: str = ""

    @classmethod
    def from_strings(
        cls,
        name: str,
        domain: tuple[float, float],
        order: float,
        chi: str,
        forcing: str = "0",
        delays: Sequence[str] = (),
        initial_values: Sequence[float] = (0.0,),
        history: str | None = None,
        exact: str | None = None,
        **kwargs,
    ) -> FddeProblem:
        return cls(
            name=name,
            domain=(float(domain[0]), float(domain[1])),
            order=order if isinstance(order, FractionalOrder) else FractionalOrder(order),
            chi=_expr(chi, "chi"),
            forcing=_expr(forcing, "forcing"),
            delays=tuple(_expr(d, f"delay{k}") for k, d in enumerate(delays)),
            initial_values=tuple(float(v) for v in initial_values),
            history=None if history is None else _expr(history, "history"),
            exact=None if exact is None else _expr(exact, "exact"),
            **kwargs,
        )

    def __post_init__(self) -> None:
        if len(self.initial_values) != self.order.n_initial:
            raise ValueError(
                f"order {self.order.q} needs {self.order.n_initial} initial values, "
                f"got {len(self.initial_values)}"
            )
        for sym in slot_symbols(self.chi):
            slot = parse_slot(sym.name)
            if slot.state is not None or slot.derivative == "frac":
                raise ExpressionError(f"slot {sym.name!r} is not allowed in chi")

    @property
    def n_states(self) -> int:
        return 1

    def forcing_fn(self, t):
        return derivatives_in_t(self.forcing, 0)[0](np.asarray(t, dtype=np.float64))

    def exact_fn(self, t):
        if self.exact is None:
            raise ValueError(f"problem {self.name!r} has no exact solution")
        return derivatives_in_t(self.exact, 0)[0](np.asarray(t, dtype=np.float64))

    def residual_expressions(self) -> list[sp.Expr]:
        """``Dy - chi - forcing`` with slots renamed to state 1."""
        lhs = sp.Symbol("Dy", real=True)
        return [lhs - self.chi - self.forcing]


@dataclass(frozen=True)
class DaeEquation:
    """One equation ``lhs = rhs`` of a (fractional) differential-algebraic system."""

    lhs: sp.Expr
    rhs: sp.Expr

    @property
    def is_algebraic(self) -> bool:
        """True when no derivative slot of any state appears."""
        for sym in slot_symbols(self.lhs - self.rhs):
            if parse_slot(sym.name).derivative != 0:
                return False
        return True


@dataclass(frozen=True)
class DaeSystem:
    """System of ``m`` equations in ``m`` states ``y1 .. ym``.

    ``orders[j]`` is the order of the Caputo slot ``Dy{j+1}``; an integer
    order means the slot is the exact network derivative.
    """

    name: str
    domain: tuple[float, float]
    orders: tuple[FractionalOrder, ...]
    equations: tuple[DaeEquation, ...]
    initial_values: tuple[float, ...]
    delays: tuple[sp.Expr, ...] = ()
    history: tuple[sp.Expr | None, ...] | None = None
    exact: tuple[sp.Expr, ...] | None = None
    architecture: tuple[tuple[str, int], ...] = ()
    description: str = ""

    @classmethod
    def from_strings(
        cls,
        name: str,
        domain: tuple[float, float],
        orders: Sequence[float],
        equations: Sequence[tuple[str, str]],
        initial_values: Sequence[float],
        delays: Sequence[str] = (),
        history: Sequence[str | None] | None = None,
        exact: Sequence[str] | None = None,
        **kwargs,
    ) -> DaeSystem:
        return cls(
            name=name,
            domain=(float(domain[0]), float(domain[1])),
            orders=tuple(FractionalOrder(q) for q in orders),
            equations=tuple(
                DaeEquation(_expr(l, f"lhs{k + 1}"), _expr(r, f"rhs{k + 1}"))
                for k, (l, r) in enumerate(equations)
            ),
            initial_values=tuple(float(v) for v in initial_values),
            delays=tuple(_expr(d, f"delay{k}") for k, d in enumerate(delays)),
            history=None if history is None else tuple(
                None if h is None else _expr(h, f"history{k + 1}") for k, h in enumerate(history)
            ),
            exact=None if exact is None else tuple(
                _expr(e, f"exact{k + 1}") for k, e in enumerate(exact)
            ),
            **kwargs,
        )

    def __post_init__(self) -> None:
        m = len(self.orders)
        if len(self.equations) != m:
            raise ValueError(f"{m} states but {len(self.equations)} equations")
        if len(self.initial_values) != m:
            raise ValueError(f"{m} states but {len(self.initial_values)} initial values")
        if any(q.n_initial > 1 for q in self.orders):
            raise ValueError("system states are limited to orders q <= 1")
        for eq in self.equations:
            for sym in slot_symbols(eq.lhs - eq.rhs):
                slot = parse_slot(sym.name)
                if slot.state is None or not 1 <= slot.state <= m:
                    raise ExpressionError(f"slot {sym.name!r} does not name a state 1..{m}")

    @property
    def n_states(self) -> int:
        return len(self.orders)

    def exact_fn(self, j: int, t):
        if self.exact is None:
            raise ValueError(f"problem {self.name!r} has no exact solution")
        return derivatives_in_t(self.exact[j], 0)[0](np.asarray(t, dtype=np.float64))

    def residual_expressions(self) -> list[sp.Expr]:
        return [eq.lhs - eq.rhs for eq in self.equations]


Problem = FddeProblem | DaeSystem


# }}}


# {{{ approximators


class ExactSurrogate:
    """Closed-form function with the jet interface of a network (no parameters)."""

    n_params = 0

    def __init__(self, expr: sp.Expr | str):
        self.expr = _expr(expr, "exact")
        self._fns = derivatives_in_t(self.expr, 2)

    def jets(self, tau: np.ndarray, order: int = 0) -> tuple[DerivativeBundle, None]:
        tau = np.asarray(tau, dtype=np.float64).reshape(-1)
        out = [fn(tau).reshape(-1, 1).copy() for fn in self._fns[: order + 1]]
        return DerivativeBundle(*out, *([None] * (3 - len(out)))), None

    def __call__(self, tau: np.ndarray) -> np.ndarray:
        return self.jets(tau, 0)[0].value


def exact_surrogates(problem: Problem) -> list[ExactSurrogate]:
    if problem.exact is None:
        raise ValueError(f"problem {problem.name!r} has no exact solution")
    if isinstance(problem, FddeProblem):
        return [ExactSurrogate(problem.exact)]
    return [ExactSurrogate(e) for e in problem.exact]


# }}}


# {{{ losses


def fdde_loss(residual: np.ndarray, boundary: np.ndarray, cfg: LossConfig = LossConfig()) -> float:
    """``lam * ||R||_2 + sum(B^2)`` (or ``lam * mean(R^2) + sum(B^2)``)."""
    return dae_loss([residual], boundary, cfg)


def dae_loss(
    residuals: Sequence[np.ndarray], boundary: np.ndarray, cfg: LossConfig = LossConfig()
) -> float:
    """``lam / m * sum_i ||R_i||_2 + sum_j B_j^2`` over the ``m`` equations."""
    m = len(residuals)
    if cfg.reduction == "paper_l2_norm":
        term = sum(float(np.linalg.norm(r)) for r in residuals)
    else:
        term = sum(float(np.mean(np.square(r))) for r in residuals)
    b = np.asarray(boundary, dtype=np.float64)
    return cfg.lam * term / m + float(np.sum(b * b))


def _loss_residual_adjoint(r: np.ndarray, m: int, cfg: LossConfig) -> np.ndarray:
    if cfg.reduction == "paper_l2_norm":
        norm = np.linalg.norm(r)
        return cfg.lam / m * r / norm if norm > 0 else np.zeros_like(r)
    return cfg.lam / m * 2.0 * r / r.size


# }}}


# {{{ compiled model


@dataclass
class _Slot:
    symbol: sp.Symbol
    state: int
    derivative: int | str
    delay: int | None


@dataclass
class _StateLayout:
    """Where a state is evaluated: grid nodes first, then each delay block."""

    order: FractionalOrder
    matrix: CaputoMatrix | None
    delays: list[int] = field(default_factory=list)
    jet_order: int = 0
    history: list[Callable] | None = None


@dataclass
class Evaluation:
    """Everything computed in one forward pass; reused by the gradient."""

    residuals: list[np.ndarray]
    boundary: np.ndarray
    slots: dict[str, np.ndarray]
    jets: list[DerivativeBundle]
    tapes: list
    masks: dict[tuple[int, int], np.ndarray]


class ResidualModel:
    """A problem compiled against a collocation grid.

    Parameters
    ----------
    problem
        An :class:`FddeProblem` or :class:`DaeSystem`.
    grid
        Collocation nodes; ``grid.nodes[0]`` must be the left end of the domain.
    cfg
        Loss weight and reduction.
    use_history
        Use the problem's history for delayed arguments below the domain;
        when false the approximator is evaluated there instead.
    strict
        Raise :class:`HistoryError` when a delayed argument leaves the domain
        and no history is available.
    """

    def __init__(
        self,
        problem: Problem,
        grid: Grid,
        cfg: LossConfig = LossConfig(),
        *,
        use_history: bool = True,
        strict: bool = False,
        matrices: Sequence[CaputoMatrix | None] | None = None,
    ):
        a, b = problem.domain
        if abs(grid.origin - a) > 1.0e-12 * max(1.0, abs(a)):
            raise ValueError(f"grid starts at {grid.origin}, problem domain at {a}")

        self.problem = problem
        self.grid = grid
        self.cfg = cfg
        self.t = grid.nodes
        self.n_nodes = grid.nodes.size

        exprs = problem.residual_expressions()
        single = isinstance(problem, FddeProblem)
        orders = (problem.order,) if single else problem.orders
        m = len(orders)

        if matrices is None:
            matrices = [None if q.is_integer else assemble_matrix(grid, q.alpha) for q in orders]
        self.layouts = [_StateLayout(order=q, matrix=A) for q, A in zip(orders, matrices)]

        # decode slots; single-state problems use unnumbered names
        slots: dict[str, _Slot] = {}
        for expr in exprs:
            for sym in slot_symbols(expr):
                s = parse_slot(sym.name)
                if s is None:
                    raise ExpressionError(f"unknown slot {sym.name!r}")
                if single != (s.state is None):
                    raise ExpressionError(f"slot {sym.name!r} does not match the problem's states")
                state = 0 if single else s.state - 1
                if s.delay is not None:
                    if s.delay >= len(problem.delays):
                        raise ExpressionError(f"slot {sym.name!r} refers to an undefined delay")
                    if s.derivative == "frac":
                        raise ExpressionError(f"Caputo slot {sym.name!r} cannot be delayed")
                slots[sym.name] = _Slot(sym, state, s.derivative, s.delay)
        self.slots = slots

        # derivative order needed per state, and delay blocks it is evaluated at
        for lay in self.layouts:
            lay.jet_order = lay.order.n_initial - 1
        for s in slots.values():
            lay = self.layouts[s.state]
            need = lay.order.n_int if s.derivative == "frac" else s.derivative
            lay.jet_order = max(lay.jet_order, need)
            if s.delay is not None and s.delay not in lay.delays:
                lay.delays.append(s.delay)
        for lay in self.layouts:
            lay.delays.sort()
            if lay.jet_order > 2:
                raise ValueError("derivatives above second order are not supported")

        # delayed arguments at every node
        self.delay_points = []
        for k, d in enumerate(problem.delays):
            pts = np.array(derivatives_in_t(d, 0)[0](self.t), dtype=np.float64)
            if np.any(pts > b + 1.0e-12 * max(1.0, abs(b))):
                raise ValueError(f"delay {k} maps beyond the right end of the domain")
            self.delay_points.append(pts)

        # history for arguments below a
        hist = problem.history
        if single:
            hist = (hist,)
        for j, lay in enumerate(self.layouts):
            h = hist[j] if hist is not None else None
            if use_history and h is not None:
                lay.history = derivatives_in_t(h, 2)
        self.masks: dict[tuple[int, int], np.ndarray] = {}
        for j, lay in enumerate(self.layouts):
            for k in lay.delays:
                below = self.delay_points[k] < a
                if np.any(below) and lay.history is None and strict:
                    raise HistoryError(f"delay {k} leaves the domain and state {j + 1} has no history")
                self.masks[(j, k)] = below if lay.history is not None else np.zeros_like(below)

        self.initial_values = (
            [problem.initial_values] if single else [(v,) for v in problem.initial_values]
        )

        # residual functions and their partial derivatives
        self.equations = []
        for expr in exprs:
            syms = slot_symbols(expr)
            args = [T, *syms]
            fn = compile_expression(expr, args)
            partials = {s.name: compile_expression(sp.diff(expr, s), args) for s in syms}
            self.equations.append((fn, [s.name for s in syms], partials))

        m_eq = len(exprs)
        if m_eq != m:
            raise ValueError(f"{m} states but {m_eq} equations")

    @property
    def n_equations(self) -> int:
        return len(self.equations)

    def points(self, j: int) -> np.ndarray:
        lay = self.layouts[j]
        return np.concatenate([self.t, *(self.delay_points[k] for k in lay.delays)])

    def _block(self, j: int, k: int | None) -> slice:
        if k is None:
            return slice(0, self.n_nodes)
        pos = self.layouts[j].delays.index(k) + 1
        return slice(pos * self.n_nodes, (pos + 1) * self.n_nodes)

    # {{{ forward

    def evaluate(self, approximators: Sequence) -> Evaluation:
        """Residuals (all nodes, row 0 included) and boundary residuals."""
        if len(approximators) != len(self.layouts):
            raise ValueError(f"expected {len(self.layouts)} approximators, got {len(approximators)}")

        jets, tapes = [], []
        for j, (lay, net) in enumerate(zip(self.layouts, approximators)):
            bundle, tape = net.jets(self.points(j), lay.jet_order)
            jets.append(bundle)
            tapes.append(tape)

        values: dict[str, np.ndarray] = {}
        for name, s in self.slots.items():
            lay = self.layouts[s.state]
            bundle = jets[s.state]
            if s.derivative == "frac":
                base = bundle[lay.order.n_int][self._block(s.state, None), 0]
                values[name] = base if lay.matrix is None else lay.matrix.weights @ base
            elif s.delay is None:
                values[name] = bundle[s.derivative][: self.n_nodes, 0]
            else:
                v = bundle[s.derivative][self._block(s.state, s.delay), 0]
                mask = self.masks[(s.state, s.delay)]
                if np.any(mask):
                    v = v.copy()
                    v[mask] = lay.history[s.derivative](self.delay_points[s.delay][mask])
                values[name] = v

        residuals = []
        for fn, names, _ in self.equations:
            residuals.append(np.array(fn(self.t, *(values[nm] for nm in names)), dtype=np.float64))

        boundary = []
        for j, ks in enumerate(self.initial_values):
            for p, k in enumerate(ks):
                boundary.append(jets[j][p][0, 0] - k)

        return Evaluation(residuals, np.array(boundary), values, jets, tapes, self.masks)

    def residuals(self, approximators: Sequence) -> list[np.ndarray]:
        return self.evaluate(approximators).residuals

    def loss(self, approximators: Sequence) -> float:
        ev = self.evaluate(approximators)
        return dae_loss([r[1:] for r in ev.residuals], ev.boundary, self.cfg)

    # }}}

    # {{{ gradient

    def loss_and_grad(self, nets: Sequence) -> tuple[float, np.ndarray]:
        """Loss and its gradient with respect to the concatenated parameters of *nets*."""
        ev = self.evaluate(nets)
        m = self.n_equations
        loss = dae_loss([r[1:] for r in ev.residuals], ev.boundary, self.cfg)

        slot_adj: dict[str, np.ndarray] = {}
        for (fn, names, partials), r in zip(self.equations, ev.residuals):
            dr = np.zeros(self.n_nodes)
            dr[1:] = _loss_residual_adjoint(r[1:], m, self.cfg)
            args = [self.t, *(ev.slots[nm] for nm in names)]
            for nm in names:
                contrib = dr * partials[nm](*args)
                slot_adj[nm] = slot_adj.get(nm, 0.0) + contrib

        grads = []
        offset = 0
        for j, (lay, net) in enumerate(zip(self.layouts, nets)):
            size = ev.jets[j].value.shape[0]
            cot = [np.zeros(size) for _ in range(lay.jet_order + 1)]

            for nm, adj in slot_adj.items():
                s = self.slots[nm]
                if s.state != j:
                    continue
                if s.derivative == "frac":
                    if lay.matrix is not None:
                        adj = lay.matrix.weights.T @ adj
                    cot[lay.order.n_int][: self.n_nodes] += adj
                elif s.delay is None:
                    cot[s.derivative][: self.n_nodes] += adj
                else:
                    keep = ~self.masks[(j, s.delay)]
                    cot[s.derivative][self._block(j, s.delay)] += adj * keep

            for p, _ in enumerate(self.initial_values[j]):
                cot[p][0] += 2.0 * ev.boundary[offset + p]
            offset += len(self.initial_values[j])

            grads.append(net.pullback(ev.tapes[j], [c[:, None] for c in cot]))

        return loss, np.concatenate(grads)

    # }}}


# }}}


# {{{ functional interface


def residual_vector(problem: FddeProblem, net, grid: Grid, cmat: CaputoMatrix | None = None, **kwargs) -> np.ndarray:
    """Collocation residual ``R_i = (A phi)_i - chi(t_i, ...)`` at every node."""
    model = ResidualModel(problem, grid, matrices=None if cmat is None else [cmat], **kwargs)
    return model.residuals([net])[0]


def boundary_residuals(problem: Problem, nets) -> np.ndarray:
    """``B_p = phi^(p)(a) - k_p`` for every initial condition."""
    if isinstance(problem, FddeProblem):
        nets = [nets] if not isinstance(nets, (list, tuple)) else nets
        pairs = [(nets[0], problem.initial_values)]
    else:
        pairs = [(net, (k,)) for net, k in zip(nets, problem.initial_values)]

    a = problem.domain[0]
    out = []
    for net, ks in pairs:
        bundle, _ = net.jets(np.array([a]), len(ks) - 1)
        out.extend(bundle[p][0, 0] - k for p, k in enumerate(ks))
    return np.array(out)


def dae_residuals(
    system: DaeSystem,
    nets: Sequence,
    grid: Grid,
    cmats: Sequence[CaputoMatrix | None] | None = None,
    **kwargs,
) -> list[np.ndarray]:
    """Residual ``lhs_j - rhs_j`` of every equation at every node."""
    return ResidualModel(system, grid, matrices=cmats, **kwargs).residuals(nets)


# }}}
