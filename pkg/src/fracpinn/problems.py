"""Benchmark problems and the plain-text problem definition format.

Problem files are INI documents with a single ``[problem]`` section::

    [problem]
    kind = fdde
    domain = 0, 1
    order = 1
    chi = 0.5*y_d0 - y
    forcing = -0.5*exp(-0.5*t)
    delays = 0.5*t
    initial = 1
    exact = exp(-t)

Systems use ``kind = dae`` with ``states``, ``orders``, ``lhs1``/``rhs1``, ...
and ``exact1``, ...  Lists are comma separated; several delays or
expressions that contain commas are separated by ``;``.
"""

from __future__ import annotations

import configparser
import re
from pathlib import Path

from fracpinn.expressions import ExpressionError, parse
from fracpinn.residual import DaeSystem, FddeProblem

__all__ = [
    "BUILTIN_IDS",
    "builtin_problem",
    "export_problem_template",
    "load_problem",
    "parse_problem",
]

# Legendre(16) -> tanh 32 -> 64 -> 32 -> Legendre(5) -> output
DDE_ARCHITECTURE = (
    ("legendre", 16),
    ("tanh", 32),
    ("tanh", 64),
    ("tanh", 32),
    ("legendre", 5),
    ("linear", 1),
)

# Legendre(40) -> tanh 5 -> 32 -> 5 -> linear 10 -> output
DAE_ARCHITECTURE = (
    ("legendre", 40),
    ("tanh", 5),
    ("tanh", 32),
    ("tanh", 5),
    ("linear", 10),
    ("linear", 1),
)

# same, with a Chebyshev block of 10 in place of the linear layer
FDAE_ARCHITECTURE = DAE_ARCHITECTURE[:4] + (("chebyshev", 10), ("linear", 1))

BUILTIN_IDS = tuple(range(1, 9))


def _example1() -> FddeProblem:
    # forcing regenerated from y = exp(-t) with delta_0 = t - sin(t^2)
    return FddeProblem.from_strings(
        "example-1",
        (0.0, 1.0),
        1,
        chi="-exp(t)*dy_d0 - cos(t)*y_d1",
        forcing="-exp(-t) - exp(sin(t**2)) + cos(t)*exp(sin(t) - t)",
        delays=("t - sin(t**2)", "t - sin(t)"),
        initial_values=(1.0,),
        exact="exp(-t)",
        architecture=DDE_ARCHITECTURE,
        description="nonlinear neutral delay equation",
    )


def _example2() -> FddeProblem:
    return FddeProblem.from_strings(
        "example-2",
        (0.0, 1.0),
        1,
        chi="-sqrt(cos(t))*dy_d0 - (sin(sqrt(t)) + exp(t))*y_d1",
        forcing="exp(t) + sqrt(cos(t))*exp(sqrt(t)) + (sin(sqrt(t)) + exp(t))*exp(sin(t))",
        delays=("sqrt(t)", "sin(t)"),
        initial_values=(1.0,),
        exact="exp(t)",
        architecture=DDE_ARCHITECTURE,
        description="nonlinear delay equation with delayed derivative",
    )


def _example3(q: float = 0.5) -> FddeProblem:
    return FddeProblem.from_strings(
        "example-3",
        (0.0, 1.0),
        1,
        chi="0.5*y_d0 - y",
        forcing=f"-0.5*exp(-{q!r}*t)",
        delays=(f"{q!r}*t",),
        initial_values=(1.0,),
        exact="exp(-t)",
        architecture=DDE_ARCHITECTURE,
        description=f"pantograph equation, q = {q}",
    )


def _example4() -> FddeProblem:
    return FddeProblem.from_strings(
        "example-4",
        (0.0, 1.0),
        1,
        chi="0.5*y + 0.5*exp(t/2)*y_d0",
        delays=("t/2",),
        initial_values=(1.0,),
        exact="exp(t)",
        architecture=DDE_ARCHITECTURE,
        description="pantograph equation",
    )


def _example5() -> FddeProblem:
    return FddeProblem.from_strings(
        "example-5",
        (0.0, 1.0),
        0.3,
        chi="y_d0 - y",
        forcing="1 - 3*t + 3*t**2 + 2000*t**2.7/(1071*gamma(0.7))",
        delays=("t - 1",),
        initial_values=(0.0,),
        history="t**3",
        exact="t**3",
        architecture=DDE_ARCHITECTURE,
        description="fractional delay equation, alpha = 0.3",
    )


def _example6() -> FddeProblem:
    return FddeProblem.from_strings(
        "example-6",
        (0.0, 1.0),
        0.5,
        chi="y_d0 + y**2",
        forcing=(
            "8/(3*sqrt(pi))*t**(3/2) - 2/sqrt(pi)*t**(1/2)"
            " - t**4 + 2*t**3 - 10/9*t**2 + 1/3*t"
        ),
        delays=("t/3",),
        initial_values=(0.0,),
        exact="t**2 - t",
        architecture=DDE_ARCHITECTURE,
        description="fractional pantograph equation, alpha = 1/2",
    )


def _example7() -> DaeSystem:
    return DaeSystem.from_strings(
        "example-7",
        (0.0, 1.0),
        (1, 1, 1),
        equations=(
            ("dy1", "y1 - y3*y2 + sin(t) + t*cos(t)"),
            ("dy2", "t*y3 + y1**2 + sec(t)**2 - t**2*(cos(t) + sin(t)**2)"),
            ("0", "y1 - y3 + t*(cos(t) - sin(t))"),
        ),
        initial_values=(0.0, 0.0, 0.0),
        exact=("t*sin(t)", "tan(t)", "t*cos(t)"),
        architecture=DAE_ARCHITECTURE,
        description="index-1 differential-algebraic system",
    )


def _example8() -> DaeSystem:
    return DaeSystem.from_strings(
        "example-8",
        (0.0, 1.0),
        (0.5, 0.5, 1),
        equations=(
            ("Dy1 + 2*y1 - gamma(7/2)/gamma(3)*y2 + y3", "2*t**(5/2) + sin(t)"),
            ("Dy2 + y2 + y3", "gamma(3)/gamma(5/2)*t**(3/2) + t**2 + sin(t)"),
            ("2*y1 + y2 - y3", "2*t**(5/2) + t**2 - sin(t)"),
        ),
        initial_values=(0.0, 0.0, 0.0),
        exact=("t**(5/2)", "t**2", "sin(t)"),
        architecture=FDAE_ARCHITECTURE,
        description="linear fractional differential-algebraic system, alpha = 1/2",
    )


_BUILTINS = {
    1: _example1,
    2: _example2,
    3: _example3,
    4: _example4,
    5: _example5,
    6: _example6,
    7: _example7,
    8: _example8,
}


def builtin_problem(id: int) -> FddeProblem | DaeSystem:
    """Benchmark problem ``1 .. 8``."""
    try:
        return _BUILTINS[int(id)]()
    except (KeyError, ValueError):
        raise ValueError(f"unknown example {id!r}; choose one of {BUILTIN_IDS}") from None


# {{{ problem files


def _line_of(text: str, key: str) -> int | None:
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*[=:]", re.IGNORECASE)
    for lineno, line in enumerate(text.splitlines(), start=1):
        if pattern.match(line):
            return lineno
    return None


def _split(value: str) -> list[str]:
    sep = ";" if ";" in value else ","
    return [v.strip() for v in value.split(sep) if v.strip()]


def _parse_architecture(value: str) -> tuple[tuple[str, int], ...]:
    out = []
    for item in _split(value):
        name, _, width = item.partition(":")
        out.append((name.strip(), int(width)))
    return tuple(out)


def parse_problem(text: str, name: str = "user-problem") -> FddeProblem | DaeSystem:
    """Build a problem from the text of a problem definition file."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ExpressionError(str(exc).splitlines()[0], line=getattr(exc, "lineno", None)) from None
    if not parser.has_section("problem"):
        raise ExpressionError("missing [problem] section")
    sec = parser["problem"]

    def get(key, default=None):
        if key not in sec:
            if default is None:
                raise ExpressionError("missing required key", key=key, line=None)
            return default
        return sec[key]

    def checked(key, default=None):
        value = get(key, default)
        try:
            parse(value, key=key)
        except ExpressionError as exc:
            raise ExpressionError(str(exc).split(": ", 1)[-1], key=key, line=_line_of(text, key)) from None
        return value

    def checked_list(key):
        if key not in sec:
            return []
        items = _split(sec[key])
        for item in items:
            try:
                parse(item, key=key)
            except ExpressionError as exc:
                raise ExpressionError(str(exc).split(": ", 1)[-1], key=key, line=_line_of(text, key)) from None
        return items

    kind = get("kind", "fdde").strip().lower()
    domain = tuple(float(v) for v in _split(get("domain", "0, 1")))
    extra = {}
    if "architecture" in sec:
        extra["architecture"] = _parse_architecture(sec["architecture"])
    if "description" in sec:
        extra["description"] = sec["description"]
    name = sec.get("name", name)

    if kind == "fdde":
        return FddeProblem.from_strings(
            name,
            domain,
            float(get("order", "1")),
            chi=checked("chi"),
            forcing=checked("forcing", "0"),
            delays=checked_list("delays"),
            initial_values=[float(v) for v in _split(get("initial", "0"))],
            history=checked("history") if "history" in sec else None,
            exact=checked("exact") if "exact" in sec else None,
            **extra,
        )

    if kind == "dae":
        m = int(get("states"))
        orders = [float(v) for v in _split(get("orders", ", ".join(["1"] * m)))]
        equations = [(checked(f"lhs{j}"), checked(f"rhs{j}", "0")) for j in range(1, m + 1)]
        exact = None
        if all(f"exact{j}" in sec for j in range(1, m + 1)):
            exact = [checked(f"exact{j}") for j in range(1, m + 1)]
        history = None
        if any(f"history{j}" in sec for j in range(1, m + 1)):
            history = [checked(f"history{j}") if f"history{j}" in sec else None for j in range(1, m + 1)]
        return DaeSystem.from_strings(
            name,
            domain,
            orders,
            equations,
            initial_values=[float(v) for v in _split(get("initial", ", ".join(["0"] * m)))],
            delays=checked_list("delays"),
            history=history,
            exact=exact,
            **extra,
        )

    raise ExpressionError(f"unknown problem kind {kind!r}", key="kind", line=_line_of(text, "kind"))


def load_problem(path: str | Path) -> FddeProblem | DaeSystem:
    path = Path(path)
    return parse_problem(path.read_text(encoding="utf-8"), name=path.stem)


PROBLEM_TEMPLATE = """\
# Problem definition for fracpinn.
#
# An equation of order q on [a, b]:
#
#     D^q y(t) = chi(t, y, dy, d2y, y_d0, dy_d0, ...) + forcing(t)
#
# D^q is the Caputo derivative for non-integer q (applied through the
# operational matrix) and the exact network derivative for integer q.
#
# Names available in expressions:
#   t                   independent variable
#   y, dy, d2y          solution and its first two derivatives at t
#   y_d0, dy_d0, ...    solution / derivative at the delayed argument delta_0(t)
#   + - * / ** ^        arithmetic
#   exp log sin cos tan sec sqrt abs gamma pi
#
# This file reproduces the pantograph equation
#     y'(t) = y(t/2)/2 - y(t) - exp(-t/2)/2,   y(0) = 1,   y = exp(-t).

[problem]
name = pantograph
kind = fdde
domain = 0, 1
# total order q; the Caputo matrix is used when q is not an integer
order = 1
chi = 0.5*y_d0 - y
forcing = -0.5*exp(-0.5*t)
# delay maps, separated by ';'
delays = 0.5*t
# y(a), y'(a), ... : ceil(q) values
initial = 1
# optional: solution for arguments below a
# history = exp(-t)
exact = exp(-t)
# optional: layers as kind:width (legendre, chebyshev, tanh, linear)
architecture = legendre:16, tanh:32, tanh:64, tanh:32, legendre:5, linear:1

# A system of m equations uses kind = dae, states = m, orders = q1, ..., qm,
# lhs1 = ..., rhs1 = ..., exact1 = ..., with slots y1, dy1, Dy1, y2, ...
"""


def export_problem_template(path: str | Path) -> Path:
    """Write a commented problem definition file to *path*."""
    path = Path(path)
    path.write_text(PROBLEM_TEMPLATE, encoding="utf-8")
    return path


# }}}
