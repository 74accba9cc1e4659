import math

import numpy as np
import pytest

from fracpinn.caputo import Grid
from fracpinn.expressions import ExpressionError
from fracpinn.polynet import build_network
from fracpinn.problems import (
    BUILTIN_IDS,
    DDE_ARCHITECTURE,
    PROBLEM_TEMPLATE,
    builtin_problem,
    export_problem_template,
    load_problem,
    parse_problem,
)
from fracpinn.residual import DaeSystem, FddeProblem, ResidualModel

SMALL = [("legendre", 4), ("tanh", 6), ("linear", 1)]


@pytest.mark.parametrize("k", BUILTIN_IDS)
def test_builtins_construct(k):
    p = builtin_problem(k)
    assert p.exact is not None
    assert p.architecture
    assert p.domain == (0.0, 1.0)


def test_unknown_builtin():
    for bad in (0, 9, "x"):
        with pytest.raises(ValueError, match="unknown example"):
            builtin_problem(bad)


def test_builtin_values():
    assert builtin_problem(3).exact_fn(0.5) == pytest.approx(0.60653066, abs=1e-8)
    # forcing of the alpha = 1/2 pantograph problem at t = 1
    f6 = 8 / (3 * math.sqrt(math.pi)) - 2 / math.sqrt(math.pi) - 1 + 2 - 10 / 9 + 1 / 3
    assert builtin_problem(6).forcing_fn(1.0) == pytest.approx(f6, rel=1e-14)
    assert f6 == pytest.approx(0.5983486, abs=1e-7)
    assert builtin_problem(5).order.alpha == pytest.approx(0.3)
    assert [q.q for q in builtin_problem(8).orders] == [0.5, 0.5, 1.0]


# {{{ problem files


def test_template_round_trip(tmp_path):
    path = export_problem_template(tmp_path / "p.ini")
    p = load_problem(path)
    assert isinstance(p, FddeProblem)
    assert p.name == "pantograph"
    assert p.architecture == DDE_ARCHITECTURE
    assert p.order.q == 1.0


def test_template_matches_builtin_residuals():
    from_file = parse_problem(PROBLEM_TEMPLATE)
    builtin = builtin_problem(3)
    rng = np.random.default_rng(0)
    grid = Grid(np.r_[0.0, np.sort(rng.uniform(0.0, 1.0, 10))])
    net = build_network(SMALL, (0.0, 1.0), seed=5)

    r_file = ResidualModel(from_file, grid).residuals([net])[0]
    r_builtin = ResidualModel(builtin, grid).residuals([net])[0]
    np.testing.assert_allclose(r_file, r_builtin, rtol=1e-14, atol=1e-15)
    x = grid.nodes
    np.testing.assert_allclose(from_file.exact_fn(x), builtin.exact_fn(x), rtol=1e-15)


def test_syntax_error_names_line():
    broken = PROBLEM_TEMPLATE.replace("chi = 0.5*y_d0 - y", "chi = 0.5*y_d0 - (y")
    lineno = next(i for i, ln in enumerate(broken.splitlines(), 1) if ln.startswith("chi"))
    with pytest.raises(ExpressionError) as info:
        parse_problem(broken)
    assert info.value.line == lineno
    assert f"line {lineno}" in str(info.value)
    assert "chi" in str(info.value)


def test_unknown_name_names_line():
    broken = PROBLEM_TEMPLATE.replace("forcing = -0.5*exp(-0.5*t)", "forcing = -0.5*expp(-0.5*t)")
    with pytest.raises(ExpressionError, match="expp") as info:
        parse_problem(broken)
    assert info.value.line is not None


def test_missing_section_and_keys():
    with pytest.raises(ExpressionError):
        parse_problem("[other]\nx = 1\n")
    with pytest.raises(ExpressionError, match="chi"):
        parse_problem("[problem]\nkind = fdde\n")
    with pytest.raises(ExpressionError, match="kind"):
        parse_problem("[problem]\nkind = pde\nchi = y\n")


def test_dae_file():
    text = """
[problem]
kind = dae
states = 2
orders = 0.5, 1
domain = 0, 2
lhs1 = Dy1 + y2
rhs1 = 1
lhs2 = 0
rhs2 = y1 - y2
initial = 0, 0
exact1 = t
exact2 = t
architecture = tanh:4, linear:1
"""
    s = parse_problem(text, name="pair")
    assert isinstance(s, DaeSystem)
    assert s.name == "pair" and s.domain == (0.0, 2.0)
    assert [q.q for q in s.orders] == [0.5, 1.0]
    assert s.architecture == (("tanh", 4), ("linear", 1))
    assert s.equations[1].is_algebraic


def test_lists_split_on_semicolons():
    text = PROBLEM_TEMPLATE.replace("delays = 0.5*t", "delays = 0.5*t; t - sin(t)")
    text = text.replace("chi = 0.5*y_d0 - y", "chi = 0.5*y_d0 - y + 0*y_d1")
    p = parse_problem(text)
    assert len(p.delays) == 2


# }}}
