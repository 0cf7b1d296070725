"""Absorbing boundary rules for the Westervelt equation.

Every rule is expressed as a recipe for the natural flux trace
(u + beta*u_t)_n on an absorbing wall (plain u_n when beta = 0), written in
outward-normal coordinates.  Low orders are algebraic,

    flux = -C(trace) * u_t,

higher orders are differential in time,

    flux_rate = -nu_hat(trace) * u_tt + G(trace),

and are advanced with the same trapezoidal rates as the interior scheme.

Families:

* PS       pseudo-differential hierarchy (orders 0/1/2 in 1-d, 0/1 in 2-d)
* PS_BETA  damping-aware variants from the energy analysis (orders 0/1)
* EM       constant-coefficient Engquist-Majda baselines (orders 1/2)
* PD       paradifferential variants (1-d only; the gamma terms double and
           the second-order correction picks up a -2*gamma*u_tt term)

The first-order 2-d rule exists in two sign conventions for the
time-integral bracket; both are kept behind ``sign_variant``:

* 'section2'  +(gamma/(2*alpha^1.5)) * (u_t/2 + u_n/nu) * integral, with the
              normal-derivative slot filled by the evolved flux state;
* 'theorem'   -(gamma/(2*alpha^1.5)) * (u_t/2 - u_n/nu) * integral, with the
              slot filled by the one-sided interior estimate trace.un.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import AbcSingularError, PhysicalParams, alpha_coeff, nu

_VALID = {
    ("PS", 1): (0, 1, 2),
    ("PS", 2): (0, 1),
    ("PS_BETA", 1): (0, 1),
    ("PS_BETA", 2): (0, 1),
    ("EM", 1): (1, 2),
    ("EM", 2): (1, 2),
    ("PD", 1): (0, 1, 2),
}


@dataclass(frozen=True)
class AbcSpec:
    """Which boundary-rule family/order/variant is active on the wall."""

    family: str
    order: int
    sign_variant: Optional[str] = None   # section2 | theorem (2-d order 1)
    t_bearing: bool = True               # time-derivative tangential term

    def __post_init__(self):
        if self.family not in ("PS", "PS_BETA", "EM", "PD"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.sign_variant not in (None, "section2", "theorem"):
            raise ValueError(f"unknown sign_variant {self.sign_variant!r}")

    def validate(self, dim: int) -> None:
        orders = _VALID.get((self.family, dim))
        if orders is None or self.order not in orders:
            raise ValueError(
                f"{self.family} order {self.order} not available in {dim}-d")

    def variant(self) -> str:
        if self.sign_variant is not None:
            return self.sign_variant
        return "theorem" if self.family == "PS_BETA" else "section2"

    def is_rate(self, dim: int) -> bool:
        """True when the rule constrains the flux rate, not the flux."""
        if dim == 1:
            return self.order == 2
        return (self.family == "EM" and self.order == 2) or \
            (self.family != "EM" and self.order == 1)

    @classmethod
    def parse(cls, text: str) -> "AbcSpec":
        """Parse 'FAMILY:ORDER[:VARIANT]', e.g. 'PS:1' or 'PS:1:theorem'."""
        parts = text.split(":")
        if len(parts) < 2:
            raise ValueError(f"cannot parse ABC spec {text!r}")
        family = parts[0].upper()
        order = int(parts[1])
        variant = parts[2] if len(parts) > 2 else None
        return cls(family=family, order=order, sign_variant=variant)

    def label(self) -> str:
        out = f"{self.family}:{self.order}"
        if self.sign_variant:
            out += f":{self.sign_variant}"
        return out


@dataclass
class BoundaryTrace:
    """Trace data on one absorbing wall, outward-normal oriented.

    All arrays have one entry per wall node.  un/utn/unn are one-sided
    derivative estimates from the interior; flux is the current natural
    flux state (u + beta*u_t)_n; u_thth the tangential second derivative
    (zero in 1-d); s the beta-combined tangential source used by the
    2-d theorem rule; accum its running time integral; uttt a lagged
    third-time-derivative estimate (used only through beta-sized terms).
    """

    u: np.ndarray
    ut: np.ndarray
    utt: np.ndarray
    un: np.ndarray
    flux: np.ndarray
    utn: np.ndarray = None
    unn: np.ndarray = None
    u_thth: np.ndarray = None
    s: np.ndarray = None
    accum: np.ndarray = None
    uttt: np.ndarray = None

    _OPTIONAL = ("utn", "unn", "u_thth", "s", "accum", "uttt")

    def __post_init__(self):
        n = len(np.atleast_1d(self.u))
        for name in self._OPTIONAL:
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n))

    @classmethod
    def from_values(cls, **kw) -> "BoundaryTrace":
        kw = {k: np.atleast_1d(np.asarray(v, dtype=float))
              for k, v in kw.items()}
        n = max(len(v) for v in kw.values())
        full = {}
        for name in ("u", "ut", "utt", "un", "flux") + cls._OPTIONAL:
            v = kw.get(name)
            full[name] = np.zeros(n) if v is None else np.broadcast_to(
                v, (n,)).astype(float).copy()
        return cls(**full)


def mu_eval(patch: dict, params: PhysicalParams):
    """Second-order correction coefficient of the 1-d hierarchy.

    Evaluates, with A0 = d/dn + nu*d/dt expanded by the chain rule on
    nu(v) = sqrt(c^-2 - 2*gamma*v),

        mu = A0[w] - gamma*w^2,   w = (v_t - v_n/nu) / (2*nu),

    from a patch of boundary values {u, ut, un, utt, utn, unn} taken in
    outward-normal coordinates (one-sided differences in space).
    """
    g = params.gamma
    u = np.asarray(patch["u"], dtype=float)
    ut = np.asarray(patch["ut"], dtype=float)
    un = np.asarray(patch["un"], dtype=float)
    utt = np.asarray(patch["utt"], dtype=float)
    utn = np.asarray(patch["utn"], dtype=float)
    unn = np.asarray(patch["unn"], dtype=float)
    nv = nu(u, params)
    nu_n = -g * un / nv
    nu_t = -g * ut / nv
    q = ut - un / nv
    q_n = utn - unn / nv + un * nu_n / nv**2
    q_t = utt - utn / nv + un * nu_t / nv**2
    w = q / (2.0 * nv)
    w_n = (q_n - q * nu_n / nv) / (2.0 * nv)
    w_t = (q_t - q * nu_t / nv) / (2.0 * nv)
    return w_n + nv * w_t - g * w**2


def mu_tilde_eval(patch: dict, params: PhysicalParams):
    """Paradifferential analog of mu_eval; carries 4*gamma*u_t inside A0's
    argument and an extra -2*gamma*u_tt, and returns the gamma-scaled value
    entering the rule as mu_tilde/(2*nu) (no further gamma factor)."""
    g = params.gamma
    u = np.asarray(patch["u"], dtype=float)
    ut = np.asarray(patch["ut"], dtype=float)
    un = np.asarray(patch["un"], dtype=float)
    utt = np.asarray(patch["utt"], dtype=float)
    utn = np.asarray(patch["utn"], dtype=float)
    unn = np.asarray(patch["unn"], dtype=float)
    nv = nu(u, params)
    nu_n = -g * un / nv
    nu_t = -g * ut / nv
    q = 3.0 * ut - un / nv
    q_n = 3.0 * utn - unn / nv + un * nu_n / nv**2
    q_t = 3.0 * utt - utn / nv + un * nu_t / nv**2
    w = q / (2.0 * nv)
    w_n = (q_n - q * nu_n / nv) / (2.0 * nv)
    w_t = (q_t - q * nu_t / nv) / (2.0 * nv)
    return g * (w_n + nv * w_t - g * w**2 - 2.0 * utt)


def _first_order_damping(u, params: PhysicalParams, gamma_scale: float):
    """C in flux = -C*u_t for first-order algebraic rules.

    Solving the first-order condition for the normal trace gives

        C = nu * (2*alpha - gamma_scale*gamma*u) / (2*alpha + gamma*u),

    gamma_scale = 1 for the PS/PS_BETA rule and 3 for the PD rule.
    """
    g = params.gamma
    nv = nu(u, params)
    a = alpha_coeff(u, params)
    den = 2.0 * a + g * np.asarray(u, dtype=float)
    if np.min(np.abs(den)) <= 1e-14 * params.c**-2 or np.min(den) <= 0.0:
        raise AbcSingularError(
            "factor multiplying the normal trace vanished in the "
            "first-order rule")
    return nv * (2.0 * a - gamma_scale * g * np.asarray(u, float)) / den


def damping_coefficient(family: str, order: int, u, params: PhysicalParams):
    """Nodal C for the algebraic rules (flux = -C*u_t)."""
    if order == 0:
        return nu(u, params) if family != "EM" else \
            np.full_like(np.asarray(u, dtype=float), 1.0 / params.c)
    if family == "EM" and order == 1:
        return np.full_like(np.asarray(u, dtype=float), 1.0 / params.c)
    if family in ("PS", "PS_BETA") and order == 1:
        return _first_order_damping(u, params, 1.0)
    if family == "PD" and order == 1:
        return _first_order_damping(u, params, 3.0)
    raise ValueError(f"{family} order {order} has no algebraic form")


def rate_terms(spec: AbcSpec, dim: int, trace: BoundaryTrace,
               params: PhysicalParams):
    """(nu_hat, G) with flux_rate = -nu_hat*u_tt + G for rate-form rules."""
    g = params.gamma
    beta = params.beta
    u, ut, utt = trace.u, trace.ut, trace.utt
    if spec.family == "EM":
        n = np.full_like(np.asarray(u, dtype=float), 1.0 / params.c)
        G = (params.c / 2.0) * trace.u_thth if dim == 2 else \
            np.zeros_like(np.asarray(u, dtype=float))
        return n, G
    nv = nu(u, params)
    if dim == 1:
        patch = {"u": u, "ut": ut, "un": trace.un, "utt": utt,
                 "utn": trace.utn, "unn": trace.unn}
        if spec.family == "PS":
            mu = mu_eval(patch, params)
            G = (g / (2.0 * nv)) * (ut**2 - trace.flux * ut / nv - mu * u)
            return nv, G
        if spec.family == "PD":
            mt = mu_tilde_eval(patch, params)
            G = (1.0 / (2.0 * nv)) * (3.0 * g * ut**2
                                      - g * trace.flux * ut / nv - mt * u)
            return nv, G
        raise ValueError(f"{spec.family} has no 1-d rate form")
    # 2-d first order
    a = alpha_coeff(u, params)
    variant = spec.variant()
    if spec.family == "PS":
        un_slot = trace.flux if variant == "section2" else trace.un
        src = trace.u_thth
        acc = trace.accum
    elif spec.family == "PS_BETA":
        un_slot = trace.flux if variant == "section2" else trace.un
        src = trace.s
        acc = trace.accum
    else:
        raise ValueError(f"{spec.family} has no 2-d rate form")
    mid = (g / (2.0 * nv)) * (ut - un_slot / nv) * ut
    if variant == "section2":
        bracket = -(g / (2.0 * a ** 1.5)) * (0.5 * ut + un_slot / nv) * acc
    else:
        bracket = (g / (2.0 * a ** 1.5)) * (0.5 * ut - un_slot / nv) * acc
    G = (1.0 / (2.0 * nv)) * src + mid + bracket
    if spec.family == "PS_BETA":
        # the rule constrains (u + beta*u_t)_nt against (u_tt + u^b_tt)/2
        G = G - nv * (beta / 2.0) * trace.uttt
    return nv, G


def ps_flux_1d(order: int, trace: BoundaryTrace, params: PhysicalParams):
    """Pseudo-differential 1-d rule.

    Orders 0 and 1 return the flux value; order 2 constrains the flux rate
    and returns it (the caller integrates in time, trace.flux holds the
    current state that appears inside the correction term).
    """
    if order == 0:
        return -nu(trace.u, params) * trace.ut
    if order == 1:
        return -damping_coefficient("PS", 1, trace.u, params) * trace.ut
    if order == 2:
        n, G = rate_terms(AbcSpec("PS", 2), 1, trace, params)
        return -n * trace.utt + G
    raise ValueError("order must be 0, 1 or 2")


def pd_flux_1d(order: int, trace: BoundaryTrace, params: PhysicalParams):
    """Paradifferential 1-d rule; order 0 coincides with ps_flux_1d."""
    if order == 0:
        return -nu(trace.u, params) * trace.ut
    if order == 1:
        return -damping_coefficient("PD", 1, trace.u, params) * trace.ut
    if order == 2:
        n, G = rate_terms(AbcSpec("PD", 2), 1, trace, params)
        return -n * trace.utt + G
    raise ValueError("order must be 0, 1 or 2")


def ps_flux_2d(order: int, trace: BoundaryTrace, params: PhysicalParams,
               sign_variant: str = "section2"):
    """Pseudo-differential 2-d rule; order 0 returns the flux, order 1 the
    flux rate (tangential second derivatives and the accumulated time
    integral come from the trace)."""
    if order == 0:
        return -nu(trace.u, params) * trace.ut
    if order == 1:
        spec = AbcSpec("PS", 1, sign_variant=sign_variant)
        n, G = rate_terms(spec, 2, trace, params)
        return -n * trace.utt + G
    raise ValueError("order must be 0 or 1 in 2-d")


def ps_beta_flux(order: int, dim: int, trace: BoundaryTrace,
                 params: PhysicalParams, sign_variant: str = "theorem",
                 t_bearing: bool = True):
    """Damping-aware rule for the natural trace (u + beta*u_t)_n.

    Order 0: flux = -nu(u)*u_t.  Order 1 in 1-d solves the same linear
    relation as ps_flux_1d with the natural trace in the solved slot, so
    the returned value coincides with ps_flux_1d(1, ...).  Order 1 in 2-d
    returns the rate of (u + beta*u_t)_n including the (u_tt + u^b_tt)/2
    average and the accumulated tangential integral.
    """
    if order == 0:
        return -nu(trace.u, params) * trace.ut
    if order != 1:
        raise ValueError("PS_BETA supports orders 0 and 1")
    if dim == 1:
        return -damping_coefficient("PS_BETA", 1, trace.u, params) * trace.ut
    spec = AbcSpec("PS_BETA", 1, sign_variant=sign_variant,
                   t_bearing=t_bearing)
    n, G = rate_terms(spec, 2, trace, params)
    return -n * trace.utt + G


def em_flux(order: int, dim: int, trace: BoundaryTrace,
            params: PhysicalParams):
    """Constant-coefficient Engquist-Majda baseline.

    Order 1: flux = -u_t/c.  Order 2 constrains the rate,
    u_nt = -u_tt/c + (c/2)*u_thth (the tangential term only in 2-d).
    """
    if order == 1:
        return -trace.ut / params.c
    if order == 2:
        n, G = rate_terms(AbcSpec("EM", 2), dim, trace, params)
        return -n * trace.utt + G
    raise ValueError("order must be 1 or 2")


def zeta_damping(u_frozen, zeta: int, params: PhysicalParams):
    """Boundary factor of the frozen-coefficient linearized problem.

    flux = -factor*u_t with

        factor = sqrt(alpha) * (2*alpha - zeta*gamma*v) / (2*alpha + zeta*gamma*v)

    evaluated on the frozen field v; zeta=0 is the zero-order rule,
    zeta=1 the first-order one.
    """
    if zeta not in (0, 1):
        raise ValueError("zeta must be 0 or 1")
    g = params.gamma
    v = np.asarray(u_frozen, dtype=float)
    a = alpha_coeff(v, params)
    if np.min(a) <= 0.0:
        raise AbcSingularError("frozen field violates coefficient positivity")
    den = 2.0 * a + zeta * g * v
    if np.min(den) <= 0.0:
        raise AbcSingularError("zeta-rule denominator vanished")
    return np.sqrt(a) * (2.0 * a - zeta * g * v) / den
