"""Adam and L-BFGS minimizers over a flat parameter vector.

Objectives are callables ``theta -> (loss, gradient)``.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

__all__ = [
    "AdamState",
    "DivergenceError",
    "LbfgsState",
    "LineSearchConfig",
    "LineSearchResult",
    "Schedule",
    "TrainResult",
    "adam_step",
    "lbfgs_direction",
    "lbfgs_update",
    "line_search",
    "train",
]

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


class DivergenceError(RuntimeError):
    """Training loss exceeded the divergence threshold."""

    def __init__(self, message: str, trace: list[tuple[int, str, float]]):
        super().__init__(message)
        self.trace = trace


# {{{ adam


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1.0e-8

    @classmethod
    def zeros(cls, size: int, **kwargs) -> AdamState:
        return cls(np.zeros(size), np.zeros(size), **kwargs)

    def __post_init__(self) -> None:
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam decay rates must lie in (0, 1)")
        if self.first_moment.shape != self.second_moment.shape:
            raise ValueError("moment estimates have different shapes")


def adam_step(
    state: AdamState, params: np.ndarray, gradient: np.ndarray
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new parameters and state."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != params.shape or gradient.shape != state.first_moment.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, gradient {gradient.shape}")
    if not np.all(np.isfinite(gradient)):
        raise FloatingPointError("non-finite gradient passed to Adam")

    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * gradient
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * gradient * gradient

    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)

    return new, replace(state, first_moment=m, second_moment=v, step_count=t)


# }}}


# {{{ l-bfgs


@dataclass
class LbfgsState:
    """Curvature pairs ``(s_k, y_k, rho_k)`` of the most recent iterations."""

    memory_size: int = 10
    memory: deque = field(default_factory=deque)
    rejected: int = 0

    def __post_init__(self) -> None:
        if self.memory_size < 1:
            raise ValueError("memory size must be positive")
        self.memory = deque(self.memory, maxlen=self.memory_size)


def lbfgs_update(state: LbfgsState, s: np.ndarray, y: np.ndarray) -> bool:
    """Store the pair ``(s, y)`` unless it violates the curvature condition."""
    sy = float(s @ y)
    if sy <= 1.0e-12 * np.linalg.norm(s) * np.linalg.norm(y):
        state.rejected += 1
        return False
    state.memory.append((s.copy(), y.copy(), 1.0 / sy))
    return True


def lbfgs_direction(state: LbfgsState, gradient: np.ndarray) -> np.ndarray:
    """``-H_k g`` by the two-loop recursion, with ``H_0 = gamma I``.

    ``gamma = s^T y / y^T y`` of the newest pair (1 for an empty memory).
    """
    q = np.array(gradient, dtype=np.float64)
    if not state.memory:
        return -q

    alphas = []
    for s, y, rho in reversed(state.memory):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)

    s, y, _ = state.memory[-1]
    r = (s @ y) / (y @ y) * q

    for (s, y, rho), a in zip(state.memory, reversed(alphas)):
        b = rho * (y @ r)
        r += (a - b) * s

    return -r


@dataclass(frozen=True)
class LineSearchConfig:
    c1: float = 1.0e-4
    c2: float = 0.9
    max_evals: int = 25
    initial_step: float = 1.0
    max_step: float = 1.0e10


@dataclass(frozen=True)
class LineSearchResult:
    success: bool
    step: float
    loss: float
    gradient: np.ndarray | None
    n_evals: int


def _cubic_min(a, fa, ga, b, fb, gb) -> float | None:
    """Minimizer of the cubic interpolating value and slope at *a* and *b*."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0.0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0.0:
        return None
    x = b - (b - a) * (gb + d2 - d1) / denom
    return x if math.isfinite(x) else None


def line_search(
    objective: Objective,
    params: np.ndarray,
    direction: np.ndarray,
    cfg: LineSearchConfig = LineSearchConfig(),
    *,
    loss0: float | None = None,
    gradient0: np.ndarray | None = None,
) -> LineSearchResult:
    """Step length satisfying the strong Wolfe conditions.

    Bracketing followed by cubic-interpolation zoom.

    Raises
    ------
    ValueError
        If *direction* is not a descent direction.
    """
    n_evals = 0
    if loss0 is None or gradient0 is None:
        loss0, gradient0 = objective(params)
        n_evals += 1

    slope0 = float(gradient0 @ direction)
    if not slope0 < 0.0:
        raise ValueError(f"not a descent direction: g^T d = {slope0}")

    def phi(step):
        f, g = objective(params + step * direction)
        return float(f), g, float(g @ direction)

    def armijo(step, f):
        return f <= loss0 + cfg.c1 * step * slope0 and f < loss0

    def curvature(slope):
        return abs(slope) <= -cfg.c2 * slope0

    def zoom(lo, f_lo, s_lo, hi, f_hi, s_hi, n_evals):
        while n_evals < cfg.max_evals:
            step = _cubic_min(lo, f_lo, s_lo, hi, f_hi, s_hi)
            left, right = min(lo, hi), max(lo, hi)
            margin = 0.1 * (right - left)
            if step is None or not left + margin <= step <= right - margin:
                step = 0.5 * (lo + hi)

            f, g, s = phi(step)
            n_evals += 1
            if not math.isfinite(f) or not armijo(step, f) or f >= f_lo:
                hi, f_hi, s_hi = step, f, s
            else:
                if curvature(s):
                    return LineSearchResult(True, step, f, g, n_evals)
                if s * (hi - lo) >= 0.0:
                    hi, f_hi, s_hi = lo, f_lo, s_lo
                lo, f_lo, s_lo = step, f, s
            if abs(hi - lo) <= 1.0e-16 * max(1.0, abs(lo)):
                break

        if lo > 0.0 and f_lo < loss0:
            # best Armijo point found; curvature not met within the budget
            f, g, _ = phi(lo)
            return LineSearchResult(False, lo, f, g, n_evals + 1)
        return LineSearchResult(False, 0.0, loss0, gradient0, n_evals)

    prev, f_prev, s_prev = 0.0, loss0, slope0
    step = cfg.initial_step
    first = True
    while n_evals < cfg.max_evals:
        f, g, s = phi(step)
        n_evals += 1

        if not math.isfinite(f) or not armijo(step, f) or (not first and f >= f_prev):
            return zoom(prev, f_prev, s_prev, step, f, s, n_evals)
        if curvature(s):
            return LineSearchResult(True, step, f, g, n_evals)
        if s >= 0.0:
            return zoom(step, f, s, prev, f_prev, s_prev, n_evals)

        prev, f_prev, s_prev = step, f, s
        step = min(2.0 * step, cfg.max_step)
        first = False

    return LineSearchResult(False, prev, f_prev, None, n_evals)


# }}}


# {{{ training loop


@dataclass(frozen=True)
class Schedule:
    """Adam epochs followed by L-BFGS iterations."""

    adam_epochs: int = 2000
    lbfgs_iterations: int = 500
    learning_rate: float = 0.01
    memory_size: int = 10
    loss_floor: float = 1.0e-14
    gradient_floor: float = 1.0e-12
    divergence_factor: float = 1.0e6
    line_search: LineSearchConfig = LineSearchConfig()

    def __post_init__(self) -> None:
        if self.adam_epochs < 0 or self.lbfgs_iterations < 0:
            raise ValueError("iteration counts must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrainResult:
    params: np.ndarray
    loss: float
    trace: list[tuple[int, str, float]]
    n_evals: int = 0
    flags: list[str] = field(default_factory=list)
    stop_reason: str = "completed"


def train(objective: Objective, params: np.ndarray, schedule: Schedule = Schedule()) -> TrainResult:
    """Minimize *objective* with Adam, then refine with L-BFGS.

    The returned parameters are the best iterate seen (lowest loss).  The
    trace records ``(iteration, phase, loss)`` for every iteration.
    """
    theta = np.array(params, dtype=np.float64)
    loss, grad = objective(theta)
    n_evals = 1

    trace: list[tuple[int, str, float]] = [(0, "init", float(loss))]
    best = (float(loss), theta.copy())
    result = TrainResult(theta, float(loss), trace)
    initial = abs(float(loss))
    limit = schedule.divergence_factor * max(initial, 1.0e-300)

    def record(it, phase, value):
        nonlocal best
        trace.append((it, phase, float(value)))
        if not math.isfinite(value) or value > limit:
            raise DivergenceError(
                f"loss {value:.3e} exceeded {schedule.divergence_factor:g} x initial "
                f"loss {initial:.3e} at iteration {it} ({phase})",
                trace,
            )

    def converged(value, g):
        if value < schedule.loss_floor:
            return "loss below floor"
        if np.linalg.norm(g) < schedule.gradient_floor:
            return "gradient below floor"
        return None

    it = 0
    stop = converged(loss, grad)

    state = AdamState.zeros(theta.size, learning_rate=schedule.learning_rate)
    for _ in range(schedule.adam_epochs):
        if stop:
            break
        theta, state = adam_step(state, theta, grad)
        loss, grad = objective(theta)
        n_evals += 1
        it += 1
        record(it, "adam", loss)
        if loss < best[0]:
            best = (float(loss), theta.copy())
        stop = converged(loss, grad)

    # L-BFGS starts from the best Adam iterate
    if schedule.lbfgs_iterations and not stop and best[0] < loss:
        theta = best[1].copy()
        loss, grad = objective(theta)
        n_evals += 1

    lb = LbfgsState(schedule.memory_size)
    failures = 0
    for _ in range(schedule.lbfgs_iterations):
        if stop:
            break
        d = lbfgs_direction(lb, grad)
        if not float(grad @ d) < 0.0:
            lb.memory.clear()
            d = -grad
            result.flags.append(f"iteration {it + 1}: reset to steepest descent")

        cfg = schedule.line_search
        if not lb.memory:
            cfg = replace(cfg, initial_step=min(1.0, 1.0 / max(np.linalg.norm(grad), 1e-300)))
        ls = line_search(objective, theta, d, cfg, loss0=loss, gradient0=grad)
        n_evals += ls.n_evals

        if ls.step == 0.0 or ls.gradient is None:
            failures += 1
            if failures > 1 or not lb.memory:
                stop = "line search failed"
                result.flags.append(f"iteration {it + 1}: line search failed")
                break
            lb.memory.clear()
            result.flags.append(f"iteration {it + 1}: line search failed, memory cleared")
            continue
        failures = 0

        new_theta = theta + ls.step * d
        lbfgs_update(lb, new_theta - theta, ls.gradient - grad)
        theta, loss, grad = new_theta, ls.loss, ls.gradient
        it += 1
        record(it, "lbfgs", loss)
        if loss < best[0]:
            best = (float(loss), theta.copy())
        stop = converged(loss, grad)

    if lb.rejected:
        result.flags.append(f"{lb.rejected} curvature pairs rejected")

    result.params = best[1]
    result.loss = best[0]
    result.n_evals = n_evals
    result.stop_reason = stop or "completed"
    logger.debug("training finished: loss %.3e after %d evaluations", result.loss, n_evals)
    return result


# }}}
