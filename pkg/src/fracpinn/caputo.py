"""Caputo derivative of order ``0 < alpha < 1`` on arbitrary (non-uniform) grids.

The L1 scheme replaces ``f'`` on each sub-interval by its forward difference
quotient and integrates the power-law kernel exactly.  Collecting the weights
row by row gives a lower-triangular operational matrix ``A`` with

    (A f)_i ~= D^alpha f(t_i),

which is assembled once and reused for every loss evaluation during training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CaputoMatrix",
    "FractionalOrder",
    "Grid",
    "apply",
    "assemble_matrix",
    "caputo_monomial",
    "compose_higher_order",
    "gamma",
    "graded_grid",
    "l1_row_weights",
    "uniform_grid",
]


# {{{ gamma

# Lanczos approximation, g = 7, nine terms.
_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def gamma(z: float) -> float:
    """Gamma function for positive real arguments.

    Uses the reflection formula below ``z = 0.5`` and the Lanczos series
    above it.

    Raises
    ------
    ValueError
        If *z* is not a finite positive number.
    """
    z = float(z)
    if not math.isfinite(z) or z <= 0.0:
        raise ValueError(f"gamma is only defined here for finite z > 0, got {z!r}")

    if z < 0.5:
        return math.pi / (math.sin(math.pi * z) * gamma(1.0 - z))

    # integer arguments are exact factorials
    if z == int(z) and z <= 171:
        return float(math.factorial(int(z) - 1))

    z -= 1.0
    x = _LANCZOS_COEF[0]
    for k in range(1, len(_LANCZOS_COEF)):
        x += _LANCZOS_COEF[k] / (z + k)
    t = z + _LANCZOS_G + 0.5
    return math.sqrt(2.0 * math.pi) * t ** (z + 0.5) * math.exp(-t) * x


# }}}


# {{{ grids


@dataclass(frozen=True)
class Grid:
    """Strictly increasing collocation nodes ``t_0 < t_1 < ... < t_n``."""

    nodes: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.nodes, dtype=np.float64).reshape(-1)
        if t.size < 2:
            raise ValueError("a grid needs at least two nodes")
        if not np.all(np.isfinite(t)):
            raise ValueError("grid nodes must be finite")

        span = t[-1] - t[0]
        if not span > 0.0 or np.min(np.diff(t)) <= 1.0e-12 * span:
            raise ValueError("grid nodes must be strictly increasing")

        t.flags.writeable = False
        object.__setattr__(self, "nodes", t)

    @property
    def origin(self) -> float:
        return float(self.nodes[0])

    @property
    def n(self) -> int:
        """Number of sub-intervals (the grid has ``n + 1`` nodes)."""
        return self.nodes.size - 1

    def __len__(self) -> int:
        return self.nodes.size


def uniform_grid(a: float, b: float, n: int) -> Grid:
    """Equidistant grid with *n* sub-intervals on ``[a, b]``."""
    if n < 1:
        raise ValueError(f"n must be positive: {n}")
    return Grid(np.linspace(a, b, n + 1))


def graded_grid(a: float, b: float, n: int, r: float = 1.0) -> Grid:
    """Graded grid ``t_k = a + (b - a) (k / n)^r`` clustering nodes near *a*.

    ``r = 1`` recovers the uniform grid.
    """
    if n < 1:
        raise ValueError(f"n must be positive: {n}")
    if r < 1.0:
        raise ValueError(f"grading exponent must be >= 1: {r}")

    s = np.linspace(0.0, 1.0, n + 1) ** r
    return Grid(a + (b - a) * s)


# }}}


# {{{ orders


@dataclass(frozen=True)
class FractionalOrder:
    """Split of a total order ``q`` into ``q = n_int + alpha``."""

    q: float
    n_int: int = field(init=False)
    alpha: float = field(init=False)

    def __post_init__(self) -> None:
        q = float(self.q)
        if not math.isfinite(q) or q <= 0.0:
            raise ValueError(f"order must be positive: {q}")

        n_int = int(math.floor(q))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "n_int", n_int)
        object.__setattr__(self, "alpha", q - n_int)

    @property
    def is_integer(self) -> bool:
        return self.alpha == 0.0

    @property
    def n_initial(self) -> int:
        """Number of initial values ``ceil(q)`` needed by a Caputo problem."""
        return int(math.ceil(self.q))


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1): {alpha}")
    return alpha


# }}}


# {{{ L1 weights


def _mu(t: np.ndarray, alpha: float) -> np.ndarray:
    """Kernel integrals ``mu[i, k]`` for all rows at once (zero for k >= i)."""
    # P[i, k] = (t_i - t_k)^(1 - alpha) for k <= i, 0 above the diagonal
    dt = np.clip(t[:, None] - t[None, :], 0.0, None)
    p = dt ** (1.0 - alpha)

    h = np.diff(t)
    return (p[:, :-1] - p[:, 1:]) / h[None, :]


def l1_row_weights(grid: Grid, alpha: float, i: int) -> np.ndarray:
    """Weights ``w_0, ..., w_i`` with ``sum_k w_k f(t_k) ~= D^alpha f(t_i)``.

    Row ``i = 0`` is identically zero.
    """
    alpha = _check_alpha(alpha)
    if not 0 <= i <= grid.n:
        raise IndexError(f"row index {i} outside [0, {grid.n}]")
    if i == 0:
        return np.zeros(1)

    t = grid.nodes[: i + 1]
    ti = t[-1]
    h = np.diff(t)
    mu = ((ti - t[:-1]) ** (1.0 - alpha) - (ti - t[1:]) ** (1.0 - alpha)) / h

    # sum_k mu_k (f_{k+1} - f_k) = sum_k (mu_{k-1} - mu_k) f_k
    w = np.zeros(i + 1)
    w[:-1] -= mu
    w[1:] += mu
    return w / gamma(2.0 - alpha)


@dataclass(frozen=True)
class CaputoMatrix:
    """Lower-triangular operational matrix of the L1 scheme."""

    alpha: float
    grid: Grid
    weights: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    def __matmul__(self, values: np.ndarray) -> np.ndarray:
        return apply(self, values)


def assemble_matrix(grid: Grid, alpha: float) -> CaputoMatrix:
    """Assemble all L1 rows for *grid* into a dense lower-triangular matrix."""
    alpha = _check_alpha(alpha)
    t = grid.nodes

    mu = _mu(t, alpha)
    w = np.zeros((t.size, t.size))
    w[:, :-1] -= mu
    w[:, 1:] += mu
    w /= gamma(2.0 - alpha)

    w.flags.writeable = False
    return CaputoMatrix(alpha=alpha, grid=grid, weights=w)


def apply(matrix: CaputoMatrix, values: np.ndarray) -> np.ndarray:
    """Approximate ``D^alpha f`` at every node from the samples ``f(t_k)``.

    *values* may carry trailing dimensions; the first axis runs over nodes.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[:1] != (matrix.weights.shape[0],):
        raise ValueError(
            f"expected {matrix.weights.shape[0]} nodal values, got shape {values.shape}"
        )
    return matrix.weights @ values


def compose_higher_order(
    matrix: CaputoMatrix, integer_derivative_values: np.ndarray
) -> np.ndarray:
    """Caputo derivative of order ``n_int + alpha`` from samples of ``f^(n_int)``.

    Uses ``D^(n + alpha) f = D^alpha (D^n f)``, so the caller differentiates
    exactly and only the fractional remainder is discretized.
    """
    return apply(matrix, integer_derivative_values)


def caputo_monomial(p: float, alpha: float, t: float | np.ndarray) -> float | np.ndarray:
    """Closed form ``D^alpha t^p = Gamma(p + 1) / Gamma(p + 1 - alpha) t^(p - alpha)``."""
    alpha = _check_alpha(alpha)
    if p < 0:
        raise ValueError(f"monomial power must be non-negative: {p}")
    if p == 0:
        return np.zeros_like(t) if isinstance(t, np.ndarray) else 0.0

    c = gamma(p + 1.0) / gamma(p + 1.0 - alpha)
    return c * np.power(t, p - alpha)


# }}}
