"""Parsing of coefficient and exact-solution expressions from config text (via sympy)."""

from __future__ import annotations

import numpy as np
import sympy as sp

from .errors import ConfigError
from .levy_operator import Constant

t_sym, x_sym = sp.symbols("t x", real=True)
_LOCALS = {"t": t_sym, "x": x_sym, "pi": sp.pi, "e": sp.E}


def parse(text: str, allowed=("t", "x")) -> sp.Expr:
    """Sympy expression from text, restricted to the given free symbols."""
    try:
        expr = sp.sympify(str(text), locals=_LOCALS)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc}") from None
    extra = {s.name for s in expr.free_symbols} - set(allowed)
    if extra:
        raise ConfigError(f"expression {text!r} uses unknown symbols {sorted(extra)}")
    return expr


def to_function(expr: sp.Expr, args=("t", "x")):
    """Numpy-vectorized callable of ``args`` that broadcasts constants."""
    syms = [_LOCALS[a] for a in args]
    if not expr.free_symbols:
        val = float(expr)
        if len(args) == 1:
            return Constant(val)
        return lambda *a: val * np.ones(np.broadcast(*[np.asarray(v, dtype=float) for v in a]).shape)
    f = sp.lambdify(syms, expr, modules="numpy")

    def fn(*a):
        a = [np.asarray(v, dtype=float) for v in a]
        out = np.asarray(f(*a), dtype=float)
        shape = np.broadcast(*a).shape
        return out if out.shape == shape else out * np.ones(shape)

    return fn


def time_function(text):
    """Coefficient of t only; returns a Constant when the expression has no t."""
    expr = parse(text, ("t",))
    if not expr.free_symbols:
        return Constant(float(expr))
    f = to_function(expr, ("t",))
    return lambda t: float(f(t))


def space_time_function(text):
    return to_function(parse(text, ("t", "x")), ("t", "x"))


def space_function(text):
    return to_function(parse(text, ("x",)), ("x",))


def exact_solution(text, probe_box=(0.0, 1.0, 0.0, 1.0)):
    """ExactSolution with derivatives obtained by symbolic differentiation."""
    from .stability_lab import ExactSolution

    u = parse(text)
    derivs = [sp.diff(u, t_sym, k) for k in range(4)]
    fns = [to_function(d) for d in derivs]
    du_dx = to_function(sp.diff(u, x_sym))
    return ExactSolution(u=fns[0], du_dt=fns[1], d2u_dt2=fns[2], d3u_dt3=fns[3], du_dx=du_dx,
                         probe_box=probe_box)
