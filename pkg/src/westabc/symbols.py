"""Numeric checks of the boundary-factorization symbol hierarchy.

The one-way wave factorization behind the absorbing rules splits the
(frozen-coefficient) operator into first-order factors whose symbols expand
in decreasing homogeneity degrees in the dual time variable tau:

    b_1 = nu * (i tau),       degree  1
    b_0 = -(A0[nu] + 2*gamma*v_t) / (2*nu),   degree 0
    b_-1 = gamma * mu / (2*nu*(i tau)),       degree -1

with A0 = d/dx + nu*d/dt and nu(v) = sqrt(c^-2 - 2*gamma*v).  The a-side
coefficients are kept as the textually independent general solutions of the
matching systems, so a_j + b_j = 0 is a verifiable identity rather than a
definition.  Everything is evaluated on frozen fields with closed-form
derivatives (symbolic expressions), which keeps the tau-scaling of the
residuals free of differencing noise.

In 2-d the leading symbol is the square root
nu*(i tau)*sqrt(1 - eta^2/(nu^2 tau^2)); Taylor truncations of the root (and
of the inverse powers entering b_0) give the practical boundary rules, and
symbol_2d exposes the exact and truncated versions side by side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
import sympy as sy

from .core import DegeneracyError, EvanescentRegimeError, PhysicalParams

__all__ = ["FrozenField", "SymbolValue", "symbol_1d", "symbol_2d",
           "factorization_residual", "group_residual", "residual_slope",
           "slope_table"]

_X, _Y, _T, _TAU, _ETA = sy.symbols("x y t tau eta", real=True)


class FrozenField:
    """Smooth reference field v with analytically known derivatives.

    Built from a sympy expression in x, t (and y in 2-d); the medium
    parameters ride along because every symbol depends on nu(v).
    """

    def __init__(self, expr, params: PhysicalParams, dim: int = 1):
        self.expr = sy.sympify(expr)
        self.params = params
        self.dim = dim
        self._lamb = {}

    @classmethod
    def sine(cls, params: PhysicalParams, eps: float, kx: float, kt: float,
             ky: float = 0.0) -> "FrozenField":
        expr = eps * sy.sin(kx * _X + ky * _Y + kt * _T)
        return cls(expr, params, dim=2 if ky != 0.0 else 1)

    @classmethod
    def constant(cls, params: PhysicalParams,
                 value: float = 0.0) -> "FrozenField":
        return cls(sy.Float(value), params, dim=1)

    def _fn(self, dx: int, dt: int, dy: int = 0):
        key = (dx, dy, dt)
        if key not in self._lamb:
            e = sy.diff(self.expr, _X, dx, _Y, dy, _T, dt)
            self._lamb[key] = sy.lambdify((_X, _Y, _T), e, "numpy")
        return self._lamb[key]

    def d(self, dx: int = 0, dt: int = 0, dy: int = 0, *, x, t, y=0.0):
        return float(self._fn(dx, dt, dy)(x, y, t))

    def check_degeneracy(self, x, t, y=0.0) -> None:
        p = self.params
        if p.c**-2 - 2.0 * p.gamma * self.d(x=x, t=t, y=y) <= 0.0:
            raise DegeneracyError("frozen field degenerate at sample point")


@dataclass(frozen=True)
class SymbolValue:
    """Complex symbol value with its homogeneity degree in tau."""

    value: complex
    degree: int


def _nu_expr(v_expr, params: PhysicalParams):
    return sy.sqrt(params.c**-2 - 2 * params.gamma * v_expr)


@lru_cache(maxsize=16)
def _cache_1d(field_key):
    """Sympy expressions of the 1-d symbol hierarchy for one field."""
    field, = field_key
    p = field.params
    g = sy.Float(p.gamma, 17)
    v = field.expr
    nu = _nu_expr(v, p)
    itau = sy.I * _TAU

    def A0(f):
        return sy.diff(f, _X) + nu * sy.diff(f, _T)

    b1 = nu * itau
    a1 = -nu * itau
    B1 = (A0(nu) + 2 * g * sy.diff(v, _T)) / (2 * nu)
    b0 = -B1
    # general solution written through a1 and its derivatives
    a0 = (sy.I * sy.diff(a1, _TAU) * sy.diff(a1, _T) + sy.diff(a1, _X)
          - 2 * g * sy.diff(v, _T) * itau) / (2 * a1)
    w = (sy.diff(v, _T) - sy.diff(v, _X) / nu) / (2 * nu)
    mu = A0(w) - g * w**2
    bm1 = g * mu / (2 * nu * itau)
    am1 = (-a0**2 + sy.I * (sy.diff(a1, _TAU) * sy.diff(a0, _T)
                            + sy.diff(a0, _TAU) * sy.diff(a1, _T))
           + sy.Rational(1, 2) * sy.diff(a1, _TAU, 2) * sy.diff(a1, _T, 2)
           + sy.diff(a0, _X)) / (2 * a1)
    lhs = nu**2 * itau**2 - 2 * g * sy.diff(v, _T) * itau
    return {"a": (a1, a0, am1), "b": (b1, b0, bm1), "lhs": lhs, "nu": nu}


class _Evaluator:
    """Lambdify-and-cache for expressions in (x, y, t, tau, eta)."""

    def __init__(self):
        self._fns = {}

    def __call__(self, expr, **vals):
        key = sy.srepr(expr)
        if key not in self._fns:
            self._fns[key] = sy.lambdify((_X, _Y, _T, _TAU, _ETA), expr,
                                         "numpy")
        out = self._fns[key](vals.get("x", 0.0), vals.get("y", 0.0),
                             vals.get("t", 0.0), vals.get("tau", 1.0),
                             vals.get("eta", 0.0))
        return complex(out)


_EVAL = _Evaluator()


def _field_key(field: FrozenField):
    return (field,)


def symbol_1d(j: int, field: FrozenField, x: float, t: float,
              tau: float) -> SymbolValue:
    """b-side symbol of degree 1-j at (x, t, tau); a_j = -b_j."""
    if tau == 0.0:
        raise ValueError("tau must be nonzero")
    field.check_degeneracy(x, t)
    if j not in (0, 1, 2):
        raise ValueError("j must be 0, 1 or 2")
    cache = _cache_1d(_field_key(field))
    expr = cache["b"][j]
    return SymbolValue(value=_EVAL(expr, x=x, t=t, tau=tau), degree=1 - j)


def symbol_1d_a(j: int, field: FrozenField, x: float, t: float,
                tau: float) -> SymbolValue:
    """a-side symbol from its general-solution form (for cross-checks)."""
    field.check_degeneracy(x, t)
    cache = _cache_1d(_field_key(field))
    expr = cache["a"][j]
    return SymbolValue(value=_EVAL(expr, x=x, t=t, tau=tau), degree=1 - j)


def _comp_term_1d(cache, kk, l, n):
    a = cache["a"][kk]
    b = cache["b"][l]
    return ((-sy.I) ** n / sy.factorial(n)) * sy.diff(a, _TAU, n) * \
        sy.diff(b, _T, n)


@lru_cache(maxsize=64)
def _residual_fn_1d(field_key, k: int):
    cache = _cache_1d(field_key)
    rhs = sy.Integer(0)
    for j in range(k + 1):
        rhs = rhs + sy.diff(cache["b"][j], _X)
    for kk in range(k + 1):
        for l in range(k + 1):
            for n in range(0, 3):
                if kk + l + n <= 3:
                    rhs = rhs - _comp_term_1d(cache, kk, l, n)
    return sy.lambdify((_X, _T, _TAU), cache["lhs"] - rhs, "numpy")


def factorization_residual(k: int, field: FrozenField, x: float, t: float,
                           tau: float, eta: Optional[float] = None) -> float:
    """|lhs - rhs| of the symbol equation truncated after degree 1-k.

    The composition series keeps n <= 2 and every term contributing to
    degrees >= -1; with the order-j systems substituted, the leftover
    scales like tau^(2-(k+1)).
    """
    if eta is not None and field.dim == 2:
        return _factorization_residual_2d(k, field, x, t, tau, eta)
    field.check_degeneracy(x, t)
    fn = _residual_fn_1d(_field_key(field), k)
    return abs(complex(fn(x, t, tau)))


def group_residual(j: int, field: FrozenField, x: float, t: float,
                   tau: float) -> float:
    """Residual of the degree-(2-j) system itself (must vanish)."""
    field.check_degeneracy(x, t)
    cache = _cache_1d(_field_key(field))
    a1, a0, am1 = cache["a"]
    b1, b0, bm1 = cache["b"]
    p = field.params
    g = sy.Float(p.gamma, 17)
    v = field.expr
    nu = cache["nu"]
    itau = sy.I * _TAU
    if j == 0:
        expr = nu**2 * itau**2 + a1 * b1
    elif j == 1:
        expr = 2 * g * sy.diff(v, _T) * itau - (
            a1 * b0 + a0 * b1 - sy.I * sy.diff(a1, _TAU) * sy.diff(b1, _T)
            - sy.diff(b1, _X))
    elif j == 2:
        expr = -(-a1 * bm1 - a0 * b0 - am1 * b1
                 + sy.I * (sy.diff(a1, _TAU) * sy.diff(b0, _T)
                           + sy.diff(a0, _TAU) * sy.diff(b1, _T))
                 + sy.Rational(1, 2) * sy.diff(a1, _TAU, 2) *
                 sy.diff(b1, _T, 2)
                 + sy.diff(b0, _X))
    else:
        raise ValueError("j must be 0, 1 or 2")
    return abs(_EVAL(expr, x=x, t=t, tau=tau))


# -- 2-d ---------------------------------------------------------------------

@lru_cache(maxsize=16)
def _cache_2d(field_key):
    field, = field_key
    p = field.params
    g = sy.Float(p.gamma, 17)
    v = field.expr
    nu = _nu_expr(v, p)
    itau = sy.I * _TAU
    X = _ETA**2 / (nu**2 * _TAU**2)
    root = sy.sqrt(1 - X)
    b1 = nu * itau * root
    a1 = -b1
    nut = sy.diff(nu, _T)
    nux = sy.diff(nu, _X)
    b0 = -nut / 2 * (1 - X) ** sy.Rational(-3, 2) \
        - nux / (2 * nu) * (1 - X) ** (-1) \
        - 2 * g * sy.diff(v, _T) / (2 * nu) * (1 - X) ** sy.Rational(-1, 2)
    a0 = -b0
    # Taylor truncations used by the practical rules
    b1_t0 = nu * itau
    b1_t1 = nu * itau * (1 - X / 2)
    b0_t0 = -nut / 2 - nux / (2 * nu) - 2 * g * sy.diff(v, _T) / (2 * nu)
    b0_t1 = -nut / 2 * (1 + 3 * X / 2) - nux / (2 * nu) * (1 + X) \
        - 2 * g * sy.diff(v, _T) / (2 * nu) * (1 + X / 2)
    lhs = nu**2 * itau**2 - (sy.I * _ETA) ** 2 \
        - 2 * g * sy.diff(v, _T) * itau
    return {"a": (a1, a0), "b": (b1, b0), "lhs": lhs,
            "taylor": {(0, 0): b1_t0, (0, 1): b1_t1,
                       (1, 0): b0_t0, (1, 1): b0_t1}, "nu": nu}


def _check_propagating(field, x, y, t, eta, tau, params):
    nu_val = math.sqrt(params.c**-2
                       - 2 * params.gamma * field.d(x=x, t=t, y=y))
    ratio = abs(eta / (nu_val * tau)) if tau != 0 else math.inf
    if ratio >= 1.0:
        raise EvanescentRegimeError(
            f"|eta/(nu tau)| = {ratio:.3f} >= 1: outside the propagating "
            "regime the root symbol is not real-hyperbolic")


def symbol_2d(j: int, taylor_order, field: FrozenField, x: float, y: float,
              t: float, eta: float, tau: float) -> SymbolValue:
    """2-d b-side symbol; taylor_order in {'exact', 0, 1}."""
    if tau == 0.0:
        raise ValueError("tau must be nonzero")
    if j not in (0, 1):
        raise ValueError("j must be 0 or 1 in 2-d")
    field.check_degeneracy(x, t, y=y)
    _check_propagating(field, x, y, t, eta, tau, field.params)
    cache = _cache_2d(_field_key(field))
    if taylor_order == "exact":
        expr = cache["b"][j]
    elif taylor_order in (0, 1):
        expr = cache["taylor"][(j, taylor_order)]
    else:
        raise ValueError("taylor_order must be 'exact', 0 or 1")
    return SymbolValue(value=_EVAL(expr, x=x, y=y, t=t, tau=tau, eta=eta),
                       degree=1 - j)


def _factorization_residual_2d(k, field, x, t, tau, eta):
    y = 0.0
    field.check_degeneracy(x, t, y=y)
    _check_propagating(field, x, y, t, eta, tau, field.params)
    cache = _cache_2d(_field_key(field))
    if k > 1:
        raise ValueError("2-d symbols are available for k <= 1")
    rhs = sy.Integer(0)
    for j in range(k + 1):
        rhs = rhs + sy.diff(cache["b"][j], _X)
    for kk in range(k + 1):
        for l in range(k + 1):
            for n_t in range(0, 3):
                for n_y in range(0, 3 - n_t):
                    if kk + l + n_t + n_y > 3:
                        continue
                    a = cache["a"][kk]
                    b = cache["b"][l]
                    term = ((-sy.I) ** (n_t + n_y)
                            / (sy.factorial(n_t) * sy.factorial(n_y))) * \
                        sy.diff(a, _TAU, n_t, _ETA, n_y) * \
                        sy.diff(b, _T, n_t, _Y, n_y)
                    rhs = rhs - term
    return abs(_EVAL(cache["lhs"] - rhs, x=x, y=y, t=t, tau=tau, eta=eta))


def residual_slope(k: int, field: FrozenField, x: float, t: float,
                   taus=None) -> float:
    """Least-squares log-log slope of the truncation residual vs tau."""
    if taus is None:
        taus = np.logspace(3.0, 6.0, 7)
    res = np.array([factorization_residual(k, field, x, t, tau)
                    for tau in taus])
    if np.any(res <= 0.0):
        return -math.inf
    return float(np.polyfit(np.log(taus), np.log(res), 1)[0])


def slope_table(field: FrozenField, x: float, t: float, ks=(0, 1, 2)):
    """(k, measured slope, expected 2-(k+1)) rows for reporting."""
    return [(k, residual_slope(k, field, x, t), 2 - (k + 1)) for k in ks]
