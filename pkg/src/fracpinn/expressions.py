"""Parsing of the expression strings used in problem definitions.

Expressions are ordinary arithmetic in ``t`` and the state slots, e.g.
``"0.5*y_d0 - y - 0.5*exp(-0.5*t)"``.  They are parsed with sympy so the
residual machinery can differentiate them symbolically with respect to each
slot and evaluate the results with numpy.
"""

from __future__ import annotations

import io
import re
import tokenize
from dataclasses import dataclass
from tokenize import TokenError
from typing import Callable

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

__all__ = [
    "ExpressionError",
    "SlotName",
    "compile_expression",
    "derivatives_in_t",
    "parse",
    "parse_slot",
    "slot_symbols",
    "time_function",
]

T = sp.Symbol("t", real=True)

_FUNCTIONS: dict[str, object] = {
    "exp": sp.exp,
    "log": sp.log,
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "sec": sp.sec,
    "sqrt": sp.sqrt,
    "gamma": sp.gamma,
    "abs": sp.Abs,
    "pi": sp.pi,
    "E": sp.E,
}

_TRANSFORMATIONS = standard_transformations + (convert_xor,)

_SLOT_RE = re.compile(r"^(D|d2|d|)y(\d*)(?:_d(\d+))?$")


class ExpressionError(ValueError):
    """An expression string could not be parsed or references unknown names."""

    def __init__(self, message: str, *, line: int | None = None, key: str | None = None):
        where = []
        if key is not None:
            where.append(f"'{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{' at '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key


@dataclass(frozen=True)
class SlotName:
    """Decoded state slot such as ``dy2_d0`` (first derivative of state 2 at delay 0).

    ``derivative`` is 0, 1, 2 for ``y``, ``dy``, ``d2y`` and ``"frac"`` for
    the leading Caputo term ``Dy``.  ``state`` is ``None`` for unnumbered
    names in single-state problems.
    """

    name: str
    derivative: int | str
    state: int | None
    delay: int | None


def parse_slot(name: str) -> SlotName | None:
    match = _SLOT_RE.match(name)
    if match is None:
        return None

    prefix, state, delay = match.groups()
    derivative = {"": 0, "d": 1, "d2": 2, "D": "frac"}[prefix]
    return SlotName(
        name=name,
        derivative=derivative,
        state=int(state) if state else None,
        delay=int(delay) if delay is not None else None,
    )


def parse(text: str, *, allow_slots: bool = True, key: str | None = None) -> sp.Expr:
    """Parse *text* into a sympy expression over ``t`` and state slots."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression", key=key)

    try:
        tokens = {tok.string for tok in tokenize.generate_tokens(io.StringIO(text).readline)
                  if tok.type == tokenize.NAME}
    except (TokenError, IndentationError) as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc}", key=key) from None

    names: dict[str, object] = dict(_FUNCTIONS)
    names["t"] = T
    for token in tokens:
        if token in names:
            continue
        if allow_slots and parse_slot(token) is not None:
            names[token] = sp.Symbol(token, real=True)
        else:
            raise ExpressionError(f"unknown name {token!r} in {text!r}", key=key)

    try:
        expr = parse_expr(text, local_dict=names, transformations=_TRANSFORMATIONS)
    except (SyntaxError, TypeError, TokenError) as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc}", key=key) from None

    return sp.sympify(expr)


def compile_expression(expr: sp.Expr, args: list[sp.Symbol]) -> Callable[..., np.ndarray]:
    """Vectorized numpy callable of *expr*; constants broadcast to the input shape."""
    fn = sp.lambdify(args, expr, modules="numpy")

    def wrapped(*values: np.ndarray) -> np.ndarray:
        shape = np.broadcast_shapes(*(np.shape(v) for v in values)) if values else ()
        return np.broadcast_to(np.asarray(fn(*values), dtype=np.float64), shape)

    return wrapped


def slot_symbols(expr: sp.Expr) -> list[sp.Symbol]:
    """State slot symbols appearing in *expr*, sorted by name."""
    return sorted((s for s in expr.free_symbols if s != T), key=lambda s: s.name)


def time_function(expr: sp.Expr) -> Callable[[np.ndarray], np.ndarray]:
    if slot_symbols(expr):
        raise ExpressionError(f"expected a function of t only: {expr}")
    return compile_expression(expr, [T])


def derivatives_in_t(expr: sp.Expr, order: int) -> list[Callable[[np.ndarray], np.ndarray]]:
    """Callables for ``expr, expr', ..., expr^(order)`` as functions of ``t``."""
    out = []
    for _ in range(order + 1):
        out.append(time_function(expr))
        expr = sp.diff(expr, T)
    return out
