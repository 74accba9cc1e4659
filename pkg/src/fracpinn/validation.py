"""Self-checks of the numerical kernels against independent oracles.

Every suite returns a :class:`SuiteResult`; :func:`run_all` runs them in a
fixed order.  The suites are cheap (a few seconds in total) and are what the
``validate`` command executes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import chebyshev as npcheb
from numpy.polynomial import legendre as npleg

from fracpinn.caputo import (
    CaputoMatrix,
    apply,
    assemble_matrix,
    caputo_monomial,
    gamma,
    graded_grid,
    uniform_grid,
)
from fracpinn.optimize import LbfgsState, lbfgs_direction, lbfgs_update
from fracpinn.polynet import (
    build_network,
    chebyshev_derivative_matrix,
    chebyshev_eval,
    legendre_derivative_matrix,
    legendre_eval,
    parameter_gradient,
)
from fracpinn.problems import builtin_problem
from fracpinn.residual import ResidualModel, exact_surrogates

__all__ = [
    "SUITES",
    "SuiteResult",
    "convergence_order",
    "run_all",
    "suite_convergence",
    "suite_derivative_matrices",
    "suite_exact_residuals",
    "suite_gamma",
    "suite_gradients",
    "suite_lbfgs",
    "suite_legendre",
    "suite_row_sums",
]


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def convergence_order(ns: Sequence[int], errors: Sequence[float]) -> float:
    """Least-squares slope of ``-log(error)`` against ``log(n)``."""
    return float(-np.polyfit(np.log(ns), np.log(errors), 1)[0])


# {{{ suites


def suite_gamma() -> SuiteResult:
    known = {0.5: math.sqrt(math.pi), 1.0: 1.0, 1.5: math.sqrt(math.pi) / 2, 5.0: 24.0, 0.7: 1.298055332647558}
    worst = max(abs(gamma(z) / v - 1.0) for z, v in known.items())
    return SuiteResult("gamma known values", worst <= 1.0e-13, f"max relative error {worst:.1e}")


def suite_convergence(alphas: Sequence[float] = (0.3, 0.5, 0.7)) -> SuiteResult:
    """L1 scheme on ``t^2``: node error at ``n = 100`` and order over ``n = 25 .. 200``."""
    ns = (25, 50, 100, 200)
    ok = True
    parts = []
    for alpha in alphas:
        errs = []
        for n in ns:
            g = uniform_grid(0.0, 1.0, n)
            d = apply(assemble_matrix(g, alpha), g.nodes**2)
            errs.append(float(np.max(np.abs(d - caputo_monomial(2, alpha, g.nodes)))))
        p = convergence_order(ns, errs)
        ok &= errs[2] <= 2.0e-2 and abs(p - (2.0 - alpha)) <= 0.35
        parts.append(f"alpha={alpha:g} order {p:.3f}")
    return SuiteResult("L1 monomial convergence", ok, ", ".join(parts))


def suite_row_sums(matrices: Sequence[CaputoMatrix] | None = None) -> SuiteResult:
    """Rows ``1..n`` of every matrix sum to zero relative to their largest weight."""
    if matrices is None:
        matrices = [
            assemble_matrix(grid, alpha)
            for grid in (uniform_grid(0.0, 1.0, 50), graded_grid(0.0, 2.0, 40, 2.0))
            for alpha in (0.1, 0.5, 0.9)
        ]
    worst = 0.0
    for A in matrices:
        rows = np.asarray(A.weights)[1:]
        rel = np.abs(rows.sum(axis=1)) / np.max(np.abs(rows), axis=1)
        worst = max(worst, float(np.max(rel)))
    return SuiteResult("row sums vanish", worst <= 1.0e-12, f"max relative row sum {worst:.1e}")


def suite_legendre(m: int = 12) -> SuiteResult:
    x = np.linspace(-1.0, 1.0, 41)
    V = legendre_eval(m, x)
    ref = npleg.legvander(x, m)
    err = float(np.max(np.abs(V - ref)))
    ends = legendre_eval(m, np.array([1.0, -1.0]))
    err = max(err, float(np.max(np.abs(ends[0] - 1.0))))
    err = max(err, float(np.max(np.abs(ends[1] - (-1.0) ** np.arange(m + 1)))))

    # orthogonality under Gauss-Legendre quadrature
    xq, wq = npleg.leggauss(m + 1)
    Vq = legendre_eval(m, xq)
    gram = Vq.T @ (wq[:, None] * Vq)
    err = max(err, float(np.max(np.abs(gram - np.diag(2.0 / (2 * np.arange(m + 1) + 1))))))

    C = chebyshev_eval(m, x)
    err = max(err, float(np.max(np.abs(C - npcheb.chebvander(x, m)))))
    return SuiteResult("Legendre and Chebyshev identities", err <= 1.0e-12, f"max deviation {err:.1e}")


def suite_derivative_matrices(m: int = 10) -> SuiteResult:
    """``P_i'(x) = sum_j D_ij P_j(x)`` against numpy's series differentiation."""
    x = np.linspace(-1.0, 1.0, 23)
    err = 0.0
    for D, val, der in (
        (legendre_derivative_matrix(m), npleg.legval, npleg.legder),
        (chebyshev_derivative_matrix(m), npcheb.chebval, npcheb.chebder),
    ):
        basis = val(x, np.eye(m + 1)).T
        for i in range(m + 1):
            expected = val(x, der(np.eye(m + 1)[i])) if i else np.zeros_like(x)
            err = max(err, float(np.max(np.abs(basis @ D[i] - expected))))
    return SuiteResult("derivative-matrix identity", err <= 1.0e-10, f"max deviation {err:.1e}")


def _richardson(f: Callable[[float], np.ndarray], h: float) -> np.ndarray:
    return (f(-2 * h) - 8 * f(-h) + 8 * f(h) - f(2 * h)) / (12 * h)


def suite_gradients(seed: int = 0) -> SuiteResult:
    """Input derivatives and parameter VJPs against central differences."""
    arch = [("legendre", 4), ("tanh", 6), ("chebyshev", 3), ("tanh", 5), ("linear", 1)]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for per_output in (False, True):
        net = build_network(arch, (0.0, 2.0), seed=seed, per_output_affine=per_output)
        x = rng.uniform(0.0, 2.0, 3)

        b = net.jets(x, 2)[0]
        d1 = _richardson(lambda h: net(x + h)[:, 0], 1.0e-3)
        d2 = _richardson(lambda h: net.jets(x + h, 1)[0].d1[:, 0], 1.0e-3)
        worst = max(worst, _relerr(b.d1[:, 0], d1), _relerr(b.d2[:, 0], d2))

        w = rng.standard_normal((3, x.size))
        g = parameter_gradient(net, x, [w[0][:, None], w[1][:, None], w[2][:, None]])
        theta = net.parameters

        def scalar(dtheta):
            bb = net.with_params(theta + dtheta).jets(x, 2)[0]
            return np.sum(w[0] * bb.value[:, 0] + w[1] * bb.d1[:, 0] + w[2] * bb.d2[:, 0])

        idx = rng.choice(theta.size, size=min(25, theta.size), replace=False)
        fd = []
        for i in idx:
            e = np.zeros_like(theta)
            e[i] = 1.0
            fd.append(_richardson(lambda h: scalar(h * e), 1.0e-4))
        worst = max(worst, _relerr(g[idx], np.array(fd)))
    return SuiteResult("gradient checks", worst <= 1.0e-6, f"max relative error {worst:.1e}")


def _relerr(a: np.ndarray, b: np.ndarray, rtol: float = 1.0e-6, atol: float = 1.0e-9) -> float:
    """Relative error in which magnitudes below ``atol / rtol`` count as ``atol / rtol``.

    A value ``<= rtol`` means ``|a - b| <= max(rtol |b|, atol)`` elementwise.
    """
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), atol / rtol)))


def suite_lbfgs(n_instances: int = 50, seed: int = 0) -> SuiteResult:
    """Two-loop recursion against the explicit BFGS inverse-Hessian recursion."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        dim = int(rng.integers(2, 6))
        mem = int(rng.integers(1, 4))
        state = LbfgsState(mem)
        pairs = []
        while len(pairs) < mem + 1:
            s = rng.standard_normal(dim)
            y = s + 0.3 * rng.standard_normal(dim)
            if lbfgs_update(state, s, y):
                pairs.append((s, y))
        kept = pairs[-mem:]

        s, y = kept[-1]
        H = (s @ y) / (y @ y) * np.eye(dim)
        for s, y in kept:
            rho = 1.0 / (s @ y)
            V = np.eye(dim) - rho * np.outer(y, s)
            H = V.T @ H @ V + rho * np.outer(s, s)

        g = rng.standard_normal(dim)
        expected = -H @ g
        worst = max(worst, float(np.max(np.abs(lbfgs_direction(state, g) - expected))))
    return SuiteResult("L-BFGS two-loop equivalence", worst <= 1.0e-10, f"max deviation {worst:.1e}")


def suite_exact_residuals() -> SuiteResult:
    """Residuals of the exact solutions: tiny for integer orders, decaying for fractional ones."""
    ok = True
    parts = []
    for k in (1, 2, 3, 4, 7):
        p = builtin_problem(k)
        grid = uniform_grid(*p.domain, 100)
        r = ResidualModel(p, grid).residuals(exact_surrogates(p))
        worst = max(float(np.max(np.abs(v))) for v in r)
        ok &= worst <= 1.0e-8
        parts.append(f"ex{k} {worst:.1e}")

    ns = (25, 50, 100, 200)
    bands = {5: 0.3, 6: 0.5, 8: 0.5}
    for k, alpha in bands.items():
        p = builtin_problem(k)
        errs = []
        for n in ns:
            r = ResidualModel(p, uniform_grid(*p.domain, n)).residuals(exact_surrogates(p))
            errs.append(max(float(np.max(np.abs(v))) for v in r))
        order = convergence_order(ns, errs)
        ok &= abs(order - (2.0 - alpha)) <= 0.35
        parts.append(f"ex{k} order {order:.2f}")
    return SuiteResult("exact-solution residuals", ok, ", ".join(parts))


# }}}


SUITES: tuple[Callable[[], SuiteResult], ...] = (
    suite_gamma,
    suite_convergence,
    suite_row_sums,
    suite_legendre,
    suite_derivative_matrices,
    suite_gradients,
    suite_lbfgs,
    suite_exact_residuals,
)


def run_all() -> list[SuiteResult]:
    results = []
    for suite in SUITES:
        try:
            results.append(suite())
        except Exception as exc:  # a crashing suite is a failing suite
            results.append(SuiteResult(suite.__name__, False, f"raised {type(exc).__name__}: {exc}"))
    return results
