import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracpinn.caputo import Grid, assemble_matrix, uniform_grid
from fracpinn.expressions import ExpressionError
from fracpinn.polynet import build_network
from fracpinn.problems import builtin_problem
from fracpinn.residual import (
    DaeSystem,
    ExactSurrogate,
    FddeProblem,
    HistoryError,
    LossConfig,
    ResidualModel,
    boundary_residuals,
    dae_loss,
    dae_residuals,
    exact_surrogates,
    fdde_loss,
    residual_vector,
)

SMALL = [("legendre", 4), ("tanh", 6), ("chebyshev", 3), ("tanh", 5), ("linear", 1)]


def _fd5(f, h):
    return (f(-2 * h) - 8 * f(-h) + 8 * f(h) - f(2 * h)) / (12 * h)


def _order(ns, errs):
    return -np.polyfit(np.log(ns), np.log(errs), 1)[0]


# {{{ residual values


def test_hand_computed_fractional_residual():
    p = FddeProblem.from_strings("lin", (0.0, 1.0), 0.5, chi="y", initial_values=(0.0,))
    r = residual_vector(p, ExactSurrogate("t"), Grid([0.0, 0.5, 1.0]))
    # D^0.5 t = t^0.5 / Gamma(1.5), exact for the L1 scheme
    np.testing.assert_allclose(r, [0.0, 0.7978845608 - 0.5, 1.1283791671 - 1.0], atol=1e-10)


def test_hand_computed_delay_residual():
    p = FddeProblem.from_strings("d", (0.0, 1.0), 1, chi="y_d0 + t*dy", delays=("t/2",), initial_values=(0.0,))
    g = uniform_grid(0.0, 1.0, 4)
    t = g.nodes
    r = residual_vector(p, ExactSurrogate("t**2"), g)
    np.testing.assert_allclose(r, 2 * t - (t / 2) ** 2 - t * 2 * t, atol=1e-14)


def test_second_order_composition():
    p = FddeProblem.from_strings("q15", (0.0, 1.0), 1.5, chi="0", initial_values=(0.0, 0.0))
    g = uniform_grid(0.0, 1.0, 50)
    r = residual_vector(p, ExactSurrogate("t**2"), g)
    # D^1.5 t^2 = D^0.5 (2 t) = 2 t^0.5 / Gamma(1.5), exact on the L1 scheme
    np.testing.assert_allclose(r, 2 * np.sqrt(g.nodes) / math.gamma(1.5), atol=1e-12)


def test_explicit_matrix_is_used():
    p = builtin_problem(6)
    g = uniform_grid(0.0, 1.0, 20)
    A = assemble_matrix(g, 0.5)
    r1 = residual_vector(p, ExactSurrogate("t**2 - t"), g, A)
    r2 = residual_vector(p, ExactSurrogate("t**2 - t"), g)
    np.testing.assert_array_equal(r1, r2)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 7])
def test_exact_solutions_have_tiny_residuals(k):
    p = builtin_problem(k)
    for grid in (uniform_grid(*p.domain, 100), Grid(np.sort(np.r_[0.0, np.random.default_rng(k).uniform(0, 1, 60), 1.0]))):
        r = ResidualModel(p, grid).residuals(exact_surrogates(p))
        assert max(np.max(np.abs(v)) for v in r) <= 1e-8


@pytest.mark.parametrize(("k", "alpha"), [(5, 0.3), (6, 0.5), (8, 0.5)])
def test_fractional_residuals_decay_at_l1_rate(k, alpha):
    p = builtin_problem(k)
    ns = (25, 50, 100, 200)
    errs = []
    for n in ns:
        r = ResidualModel(p, uniform_grid(*p.domain, n)).residuals(exact_surrogates(p))
        errs.append(max(np.max(np.abs(v)) for v in r))
    assert abs(_order(ns, errs) - (2 - alpha)) <= 0.35


def test_boundary_residuals():
    p = builtin_problem(3)
    np.testing.assert_allclose(boundary_residuals(p, ExactSurrogate("exp(-t)")), [0.0], atol=1e-15)
    np.testing.assert_allclose(boundary_residuals(p, ExactSurrogate("2 + t")), [1.0])
    s = builtin_problem(7)
    np.testing.assert_allclose(boundary_residuals(s, exact_surrogates(s)), 0.0, atol=1e-15)


def test_dae_residuals_shape():
    s = builtin_problem(8)
    r = dae_residuals(s, exact_surrogates(s), uniform_grid(0.0, 1.0, 30))
    assert len(r) == 3 and all(v.shape == (31,) for v in r)
    # the algebraic equation is exact at every node
    np.testing.assert_allclose(r[2], 0.0, atol=1e-14)


# }}}


# {{{ history


def test_history_replaces_network_below_domain():
    p = builtin_problem(5)
    g = uniform_grid(0.0, 1.0, 10)
    model = ResidualModel(p, g)
    wrong = ExactSurrogate("t**3 + 5")
    ev = model.evaluate([wrong])
    d = g.nodes - 1.0
    np.testing.assert_allclose(ev.slots["y_d0"], np.where(d < 0, d**3, d**3 + 5.0), atol=1e-14)

    no_hist = ResidualModel(p, g, use_history=False).evaluate([wrong])
    np.testing.assert_allclose(no_hist.slots["y_d0"], d**3 + 5.0, atol=1e-14)


def test_strict_mode_requires_history():
    p = FddeProblem.from_strings("x", (0.0, 1.0), 1, chi="y_d0", delays=("t - 0.5",), initial_values=(1.0,))
    with pytest.raises(HistoryError):
        ResidualModel(p, uniform_grid(0.0, 1.0, 4), strict=True)
    ResidualModel(p, uniform_grid(0.0, 1.0, 4))


def test_delay_beyond_domain_rejected():
    p = FddeProblem.from_strings("x", (0.0, 1.0), 1, chi="y_d0", delays=("2*t",), initial_values=(1.0,))
    with pytest.raises(ValueError, match="beyond"):
        ResidualModel(p, uniform_grid(0.0, 1.0, 4))


# }}}


# {{{ validation


def test_problem_validation():
    with pytest.raises(ValueError):
        FddeProblem.from_strings("x", (0.0, 1.0), 1.5, chi="y", initial_values=(1.0,))
    with pytest.raises(ExpressionError):
        FddeProblem.from_strings("x", (0.0, 1.0), 1, chi="Dy")
    with pytest.raises(ExpressionError):
        FddeProblem.from_strings("x", (0.0, 1.0), 1, chi="foo(t)")
    with pytest.raises(ValueError):
        DaeSystem.from_strings("s", (0.0, 1.0), (1, 1), [("dy1", "y2")], (0.0, 0.0))
    with pytest.raises(ValueError):
        DaeSystem.from_strings("s", (0.0, 1.0), (1.5,), [("Dy1", "0")], (0.0,))
    with pytest.raises(ExpressionError):
        DaeSystem.from_strings("s", (0.0, 1.0), (1,), [("dy2", "0")], (0.0,))


def test_model_checks():
    p = builtin_problem(3)
    with pytest.raises(ValueError):
        ResidualModel(p, uniform_grid(0.5, 1.0, 4))
    model = ResidualModel(p, uniform_grid(0.0, 1.0, 4))
    with pytest.raises(ValueError):
        model.evaluate([])
    with pytest.raises(ExpressionError):
        ResidualModel(
            FddeProblem.from_strings("x", (0.0, 1.0), 1, chi="y_d3", delays=("t/2",), initial_values=(0.0,)),
            uniform_grid(0.0, 1.0, 4),
        )


def test_algebraic_equations_flagged():
    s = builtin_problem(7)
    assert [e.is_algebraic for e in s.equations] == [False, False, True]


# }}}


# {{{ losses


def test_loss_formulas_by_hand():
    r = np.array([3.0, 4.0])
    b = np.array([0.5])
    assert fdde_loss(r, b, LossConfig(10.0, "paper_l2_norm")) == pytest.approx(10 * 5 + 0.25)
    assert fdde_loss(r, b, LossConfig(2.0, "mean_square")) == pytest.approx(2 * 12.5 + 0.25)
    assert dae_loss([r, np.zeros(2)], b, LossConfig(10.0, "paper_l2_norm")) == pytest.approx(10 / 2 * 5 + 0.25)
    with pytest.raises(ValueError):
        LossConfig(0.0)
    with pytest.raises(ValueError):
        LossConfig(1.0, "huber")


def test_loss_excludes_first_row():
    p = FddeProblem.from_strings("c", (0.0, 1.0), 0.5, chi="-exp(-t)", initial_values=(0.0,))
    g = uniform_grid(0.0, 1.0, 5)
    model = ResidualModel(p, g, LossConfig(1.0, "mean_square"))
    # y = 0: residual is exp(-t); row 0 carries no equation information
    ev = model.evaluate([ExactSurrogate("0")])
    np.testing.assert_allclose(ev.residuals[0], np.exp(-g.nodes), rtol=1e-15)
    assert model.loss([ExactSurrogate("0")]) == pytest.approx(np.mean(np.exp(-2 * g.nodes[1:])), rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(
    r=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20),
    c=st.floats(0.01, 100.0),
)
def test_loss_scaling(r, c):
    r = np.array(r)
    base = fdde_loss(r, np.zeros(1), LossConfig(1.0, "paper_l2_norm"))
    assert fdde_loss(c * r, np.zeros(1), LossConfig(1.0, "paper_l2_norm")) == pytest.approx(c * base, rel=1e-12, abs=1e-300)
    ms = fdde_loss(r, np.zeros(1), LossConfig(1.0, "mean_square"))
    assert fdde_loss(c * r, np.zeros(1), LossConfig(1.0, "mean_square")) == pytest.approx(c * c * ms, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("k", [1, 3, 5, 6, 8])
@pytest.mark.parametrize("reduction", ["paper_l2_norm", "mean_square"])
def test_loss_gradient_finite_differences(k, reduction):
    p = builtin_problem(k)
    model = ResidualModel(p, uniform_grid(*p.domain, 12), LossConfig(10.0, reduction))
    nets = [build_network(SMALL, p.domain, seed=j + 1, per_output_affine=bool(j % 2)) for j in range(p.n_states)]
    sizes = [n.n_params for n in nets]
    theta = np.concatenate([n.parameters for n in nets])

    def loss(th):
        parts = np.split(th, np.cumsum(sizes)[:-1])
        return model.loss([n.with_params(q) for n, q in zip(nets, parts)])

    value, grad = model.loss_and_grad(nets)
    assert value == pytest.approx(loss(theta), rel=1e-14)

    idx = np.random.default_rng(k).choice(theta.size, 20, replace=False)
    fd = np.array([_fd5(lambda h: loss(theta + h * np.eye(theta.size)[i]), 1e-5) for i in idx])
    np.testing.assert_allclose(grad[idx], fd, rtol=1e-6, atol=1e-9)


# }}}
