import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracpinn.caputo import (
    FractionalOrder,
    Grid,
    apply,
    assemble_matrix,
    caputo_monomial,
    compose_higher_order,
    gamma,
    graded_grid,
    l1_row_weights,
    uniform_grid,
)


def _caputo_quadrature(df, alpha, t, n=20000):
    """Independent oracle: D^alpha f(t) = int_0^t f'(s) (t - s)^-alpha ds / Gamma(1 - alpha).

    The substitution s = t - u^(1/(1 - alpha)) removes the endpoint singularity.
    """
    p = 1.0 / (1.0 - alpha)
    umax = t ** (1.0 - alpha)
    u = np.linspace(0.0, umax, n + 1)
    s = np.maximum(t - u**p, 0.0)
    integrand = df(s) * p
    return np.trapezoid(integrand, u) / math.gamma(1.0 - alpha)


# {{{ gamma


@pytest.mark.parametrize(
    ("z", "expected"),
    [
        (0.5, 1.7724538509055160),
        (1.0, 1.0),
        (1.5, 0.8862269254527580),
        (2.0, 1.0),
        (5.0, 24.0),
    ],
)
def test_gamma_known_values(z, expected):
    assert gamma(z) == pytest.approx(expected, rel=1e-14)


def test_gamma_matches_libm_on_range():
    z = np.linspace(0.1, 20.0, 4001)[1:]
    rel = [abs(gamma(v) / math.gamma(v) - 1.0) for v in z]
    assert max(rel) <= 1e-13


@pytest.mark.parametrize("z", [0.0, -1.0, math.inf, math.nan])
def test_gamma_domain_error(z):
    with pytest.raises(ValueError):
        gamma(z)


# }}}


# {{{ grids and orders


def test_grid_rejects_bad_nodes():
    with pytest.raises(ValueError):
        Grid([0.0, 0.5, 0.5, 1.0])
    with pytest.raises(ValueError):
        Grid([0.0, 1.0, 0.5])
    with pytest.raises(ValueError):
        Grid([0.0, np.inf])
    with pytest.raises(ValueError):
        Grid([1.0])


def test_graded_grid_clusters_at_origin():
    g = graded_grid(0.0, 1.0, 10, r=2.0)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0
    assert np.all(np.diff(np.diff(g.nodes)) > 0)
    np.testing.assert_allclose(graded_grid(0.0, 2.0, 8).nodes, uniform_grid(0.0, 2.0, 8).nodes)


def test_fractional_order_split():
    q = FractionalOrder(1.3)
    assert q.n_int == 1
    assert q.alpha == pytest.approx(0.3)
    assert q.n_initial == 2
    assert FractionalOrder(1).is_integer
    with pytest.raises(ValueError):
        FractionalOrder(0)


# }}}


# {{{ weights


def test_row_weights_hand_values():
    g = Grid([0.0, 0.5, 1.0])
    w2 = l1_row_weights(g, 0.5, 2)
    w1 = l1_row_weights(g, 0.5, 1)

    # L1 is exact on affine functions: D^0.5 t = t^0.5 / Gamma(1.5)
    assert w2 @ g.nodes == pytest.approx(1.1283791671, abs=1e-10)
    assert w1 @ g.nodes[:2] == pytest.approx(0.7978845608, abs=1e-10)

    # hand evaluation of mu_0, mu_1 for row 2
    mu0 = (1.0**0.5 - 0.5**0.5) / 0.5
    mu1 = (0.5**0.5 - 0.0) / 0.5
    assert mu0 == pytest.approx(0.585786, abs=1e-6)
    assert mu1 == pytest.approx(1.414214, abs=1e-6)
    expected = np.array([-mu0, mu0 - mu1, mu1]) / math.gamma(1.5)
    np.testing.assert_allclose(w2, expected, rtol=1e-14)


def test_row_zero_is_zero():
    g = uniform_grid(0.0, 1.0, 4)
    np.testing.assert_array_equal(l1_row_weights(g, 0.4, 0), [0.0])


def test_alpha_outside_unit_interval():
    g = uniform_grid(0.0, 1.0, 4)
    for alpha in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ValueError):
            l1_row_weights(g, alpha, 2)
        with pytest.raises(ValueError):
            assemble_matrix(g, alpha)


def test_single_interval_matrix():
    for alpha in (0.2, 0.5, 0.9):
        A = assemble_matrix(Grid([0.0, 1.0]), alpha)
        c = 1.0 / math.gamma(2.0 - alpha)
        np.testing.assert_allclose(A.weights, [[0.0, 0.0], [-c, c]], rtol=1e-14)


def test_uniform_grid_matches_equidistant_formula():
    n, alpha = 12, 0.35
    h = 1.0 / n
    A = assemble_matrix(uniform_grid(0.0, 1.0, n), alpha)

    # last row from mu_k = [((n-k)h)^(1-a) - ((n-k-1)h)^(1-a)] / h
    k = np.arange(n)
    mu = (((n - k) * h) ** (1 - alpha) - ((n - k - 1) * h) ** (1 - alpha)) / h
    w = np.zeros(n + 1)
    w[:-1] -= mu
    w[1:] += mu
    np.testing.assert_allclose(A.weights[-1], w / math.gamma(2 - alpha), rtol=1e-12)


def test_matrix_rows_match_row_weights():
    g = graded_grid(0.0, 2.0, 9, r=1.7)
    A = assemble_matrix(g, 0.6)
    for i in range(1, g.n + 1):
        np.testing.assert_allclose(A.weights[i, : i + 1], l1_row_weights(g, 0.6, i), rtol=1e-13)
        assert np.all(A.weights[i, i + 1 :] == 0.0)


def test_matrix_is_immutable():
    A = assemble_matrix(uniform_grid(0.0, 1.0, 4), 0.5)
    with pytest.raises(ValueError):
        A.weights[1, 1] = 3.0


# }}}


# {{{ apply


def test_apply_t_squared_alpha_half():
    g = uniform_grid(0.0, 1.0, 100)
    A = assemble_matrix(g, 0.5)
    d = apply(A, g.nodes**2)
    assert abs(d[-1] - 8.0 / (3.0 * math.sqrt(math.pi))) <= 2e-2
    assert 8.0 / (3.0 * math.sqrt(math.pi)) == pytest.approx(1.5045055561, abs=1e-10)


def test_apply_t_cubed_converges():
    expected = (2000.0 / 1071.0) / gamma(0.7)
    assert caputo_monomial(3, 0.3, 1.0) == pytest.approx(expected, rel=1e-13)
    assert expected == pytest.approx(1.4387, abs=1e-4)

    errors = []
    for n in (50, 100, 200):
        g = uniform_grid(0.0, 1.0, n)
        errors.append(abs(apply(assemble_matrix(g, 0.3), g.nodes**3)[-1] - expected))
    assert errors[0] > errors[1] > errors[2]
    assert errors[-1] < 1e-3


def test_apply_matches_quadrature_oracle_on_graded_grid():
    g = graded_grid(0.0, 1.0, 400, r=1.5)
    A = assemble_matrix(g, 0.4)
    d = apply(A, np.sin(g.nodes))
    for i in (100, 250, 400):
        ref = _caputo_quadrature(np.cos, 0.4, g.nodes[i])
        assert d[i] == pytest.approx(ref, abs=2e-4)


def test_apply_constant_and_shape():
    A = assemble_matrix(uniform_grid(0.0, 1.0, 10), 0.5)
    np.testing.assert_allclose(apply(A, np.full(11, 5.0)), 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        apply(A, np.ones(10))


def test_apply_columns():
    g = uniform_grid(0.0, 1.0, 10)
    A = assemble_matrix(g, 0.5)
    f = np.column_stack([g.nodes, g.nodes**2])
    out = apply(A, f)
    np.testing.assert_allclose(out[:, 0], apply(A, g.nodes))
    np.testing.assert_allclose(out[:, 1], A @ g.nodes**2)


# }}}


# {{{ monomials and composition


def test_caputo_monomial_values():
    assert caputo_monomial(2, 0.5, 1.0) == pytest.approx(8 / (3 * math.sqrt(math.pi)), rel=1e-14)
    assert caputo_monomial(1, 0.5, 1.0) == pytest.approx(2 / math.sqrt(math.pi), rel=1e-14)
    assert caputo_monomial(0, 0.5, 0.7) == 0.0
    with pytest.raises(ValueError):
        caputo_monomial(-1, 0.5, 1.0)


def test_caputo_monomial_matches_quadrature():
    for p, alpha, t in [(2.5, 0.5, 0.8), (3.0, 0.3, 1.0), (1.5, 0.7, 0.4)]:
        ref = _caputo_quadrature(lambda s: p * s ** (p - 1), alpha, t)
        assert caputo_monomial(p, alpha, t) == pytest.approx(ref, rel=1e-6)


def test_compose_higher_order():
    g = uniform_grid(0.0, 1.0, 200)
    A = assemble_matrix(g, 0.5)

    # f = t^2, q = 1.5: D^0.5 (2 t) = 2 / Gamma(1.5) t^0.5
    out = compose_higher_order(A, 2.0 * g.nodes)
    assert out[-1] == pytest.approx(2.0 / math.gamma(1.5), rel=1e-10)
    assert 2.0 / math.gamma(1.5) == pytest.approx(2.2567583, abs=1e-7)

    # affine f: second derivative vanishes, first derivative constant
    np.testing.assert_allclose(compose_higher_order(A, np.full(201, 3.0)), 0.0, atol=1e-12)

    # f = t^3, q = 1.3
    A3 = assemble_matrix(g, 0.3)
    out = compose_higher_order(A3, 3.0 * g.nodes**2)
    assert out[-1] == pytest.approx(math.gamma(4) / math.gamma(2.7), abs=2e-3)


# }}}


# {{{ properties


def test_convergence_order_t_squared():
    ns = np.array([25, 50, 100, 200])
    for alpha in (0.3, 0.5, 0.7):
        err = []
        for n in ns:
            g = uniform_grid(0.0, 1.0, int(n))
            d = apply(assemble_matrix(g, alpha), g.nodes**2)
            err.append(np.max(np.abs(d - caputo_monomial(2, alpha, g.nodes))))
        order = -np.polyfit(np.log(ns), np.log(err), 1)[0]
        assert 2 - alpha - 0.35 <= order <= 2 - alpha + 0.35
        if alpha == 0.5:
            assert order >= 1.3


def test_alpha_to_one_limit():
    g = graded_grid(0.0, 1.0, 30, r=1.3)
    f = np.exp(g.nodes)
    d = apply(assemble_matrix(g, 1.0 - 1.0e-6), f)
    backward = (f[-1] - f[-2]) / (g.nodes[-1] - g.nodes[-2])
    assert abs(d[-1] - backward) < 1e-3


grids = st.builds(
    lambda gaps, a: Grid(a + np.concatenate([[0.0], np.cumsum(gaps)])),
    st.lists(st.floats(0.01, 1.0), min_size=1, max_size=40),
    st.floats(-5.0, 5.0),
)


@settings(max_examples=100, deadline=None)
@given(grid=grids, alpha=st.floats(0.01, 0.99), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_structural_invariants(grid, alpha, a, b):
    A = assemble_matrix(grid, alpha)
    w = A.weights

    assert np.all(w[0] == 0.0)
    assert np.all(np.triu(w, 1) == 0.0)

    rows = w[1:]
    scale = np.max(np.abs(rows), axis=1)
    assert np.all(np.abs(rows.sum(axis=1)) <= 1e-12 * scale)

    rng = np.random.default_rng(0)
    f, g = rng.standard_normal((2, len(grid)))
    lhs = apply(A, a * f + b * g)
    rhs = a * apply(A, f) + b * apply(A, g)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * (1 + np.max(np.abs(w))))


@settings(max_examples=50, deadline=None)
@given(grid=grids, alpha=st.floats(0.01, 0.99), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_exact_on_affine_functions(grid, alpha, a, b):
    t = grid.nodes
    d = apply(assemble_matrix(grid, alpha), a * t + b)
    expected = a * caputo_monomial(1, alpha, t - t[0])
    np.testing.assert_allclose(d[1:], expected[1:], rtol=1e-10, atol=1e-12 * (abs(a) + abs(b)) * np.max(np.abs(assemble_matrix(grid, alpha).weights)))


# }}}
