"""Discrete energy functionals and energy-identity residuals.

The functionals are quadratures of

    E0 = 1/2 ( ||sqrt(alpha) u_t||^2 + ||grad u||^2 )
    E1 = E0[u_t]
    E2 = 1/2 ( ||alpha u_tt||^2 + ||sqrt(alpha) grad u_t||^2
               + ||sqrt(alpha) d/dx (u^b)_t||^2 + ||grad d/dx u^b||^2 )
    E3 = E1 + (lam*beta/2) ||lap u||^2
    E4 = 2*E2 + lam*beta ||lap u||^2

with alpha = c^-2 - 2*gamma*u, u^b = u + beta*u_t, and x the first axis
(the outward-normal direction of the standard absorbing wall).  All
quadratures reuse the solver's element machinery; lap(u) is recovered
through the stiffness action and the consistent mass inverse, with the
stored natural-flux traces closing the boundary term.

Identity residuals integrate the time integrals by the trapezoidal rule,
so they decay at O(dt^2) under refinement; they are diagnostics, not
conserved quantities, except in the linear undamped case.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import DegeneracyError, PhysicalParams, SimConfig, WaveState, \
    alpha_coeff
from .fem import DiscreteOperators
from .solver import RunResult, SourceEval

__all__ = ["energy", "EnergyReport", "energy_report", "identity_residual",
           "write_energy_csv"]


def _alpha_checked(u, params):
    a = alpha_coeff(u, params)
    if np.min(a) <= 0.0:
        raise DegeneracyError("state violates coefficient positivity")
    return a


def _quad_weighted_sq(ops, weight_gp, field_gp):
    return ops.quad_integral(weight_gp * field_gp**2)


def discrete_laplacian(state: WaveState, ops: DiscreteOperators,
                       params: PhysicalParams,
                       source: Optional[SourceEval] = None) -> np.ndarray:
    """Nodal lap(u) via stiffness action, mass inverse and flux closure."""
    rhs = -(ops.stiffness @ state.u)
    for side, ws in state.walls.items():
        wall = ops.walls[side]
        un = ws.flux - params.beta * ws.flux_rate  # first order in beta
        wall.scatter(wall.B_local @ un, rhs)
    if source is not None:
        g, _ = source(state.t)
        wall = ops.source_walls[source.source.wall]
        wall.scatter(wall.B_local @ g, rhs)
    return ops.mass_solve(rhs)


def energy(level: int, state: WaveState, params: PhysicalParams,
           ops: DiscreteOperators, lambda_weight: float = 1.0,
           source: Optional[SourceEval] = None) -> float:
    """Evaluate one energy functional on a state (levels 0..4)."""
    a_nodal = _alpha_checked(state.u, params)
    K = ops.stiffness
    u, v, acc = state.u, state.ut, state.utt
    if level == 0:
        return 0.5 * (v @ ops.weighted_load(a_nodal, v) + u @ (K @ u))
    if level == 1:
        return 0.5 * (acc @ ops.weighted_load(a_nodal, acc) + v @ (K @ v))
    beta = params.beta
    if level in (2, 4):
        a_gp = ops.quad_values(a_nodal)
        acc_gp = ops.quad_values(acc)
        grad_vt = ops.quad_gradients(v)
        ub = u + beta * v
        ubt = v + beta * acc
        ubx = ops.project_gradient(ub, axis=0)
        ubtx_gp = ops.quad_gradients(ubt)[:, :, 0]
        e2 = 0.5 * (_quad_weighted_sq(ops, a_gp**2, acc_gp)
                    + ops.quad_integral(
                        a_gp * np.sum(grad_vt**2, axis=2))
                    + _quad_weighted_sq(ops, a_gp, ubtx_gp)
                    + ubx @ (K @ ubx))
        if level == 2:
            return e2
        lap = discrete_laplacian(state, ops, params, source)
        return 2.0 * e2 + lambda_weight * beta * (lap @ (ops.mass @ lap))
    if level == 3:
        e1 = 0.5 * (acc @ ops.weighted_load(a_nodal, acc) + v @ (K @ v))
        lap = discrete_laplacian(state, ops, params, source)
        return e1 + 0.5 * lambda_weight * beta * (lap @ (ops.mass @ lap))
    raise ValueError("level must be 0..4")


@dataclass
class EnergyReport:
    """Per-snapshot energies and cumulative dissipation traces."""

    t: np.ndarray
    e: np.ndarray                 # (n_snap, 5)
    dissip_interior: np.ndarray   # cumulative beta*int ||grad u_t||^2
    dissip_boundary: np.ndarray   # cumulative int ||alpha^(1/4) u_t||^2
    residuals: dict = field(default_factory=dict)

    def level(self, k: int) -> np.ndarray:
        return self.e[:, k]


def _source_eval(config: SimConfig) -> Optional[SourceEval]:
    if config.source is None:
        return None
    return SourceEval(config.source, config.grid, config.params)


def _boundary_dissipation_rate(state, ops, params) -> float:
    out = 0.0
    for side, ws in state.walls.items():
        wall = ops.walls[side]
        sa = np.sqrt(np.sqrt(alpha_coeff(state.u[wall.nodes], params))) ** 2
        vals = sa * state.ut[wall.nodes] ** 2
        out += float(np.sum(wall.B_local @ vals))
    return out


def energy_report(run: RunResult, ops: DiscreteOperators,
                  lambda_weight: float = 1.0,
                  levels=(0, 1, 2, 3, 4),
                  residual_ids=()) -> EnergyReport:
    """Evaluate the energy functionals over a run's snapshots."""
    params = run.config.params
    source = _source_eval(run.config)
    n = len(run.states)
    e = np.zeros((n, 5))
    for i, s in enumerate(run.states):
        for k in levels:
            e[i, k] = energy(k, s, params, ops, lambda_weight, source)
    dt_snap = np.diff(run.times)
    K = ops.stiffness
    int_rate = np.array([params.beta * (s.ut @ (K @ s.ut))
                         for s in run.states])
    bnd_rate = np.array([_boundary_dissipation_rate(s, ops, params)
                         for s in run.states])
    cum_int = np.concatenate([[0.0], np.cumsum(
        0.5 * dt_snap * (int_rate[:-1] + int_rate[1:]))])
    cum_bnd = np.concatenate([[0.0], np.cumsum(
        0.5 * dt_snap * (bnd_rate[:-1] + bnd_rate[1:]))])
    report = EnergyReport(t=run.times.copy(), e=e, dissip_interior=cum_int,
                          dissip_boundary=cum_bnd)
    for which in residual_ids:
        report.residuals[which] = identity_residual(which, run, ops)
    return report


def _require_every_step(run: RunResult) -> None:
    dt = run.config.dt
    if len(run.times) != run.config.n_steps + 1 or \
            not np.allclose(np.diff(run.times), dt, rtol=1e-9):
        raise ValueError("identity residuals need snapshots at every step")


def _boundary_work_series(run: RunResult, ops, rate: bool) -> np.ndarray:
    """Per-snapshot integrand of the boundary work (flux x velocity)."""
    params = run.config.params
    source = _source_eval(run.config)
    vals = np.zeros(len(run.states))
    for i, s in enumerate(run.states):
        tot = 0.0
        for side, ws in s.walls.items():
            wall = ops.walls[side]
            f = ws.flux_rate if rate else ws.flux
            w = s.utt if rate else s.ut
            tot += w[wall.nodes] @ (wall.B_local @ f)
        vals[i] = tot
    if source is not None:
        wall = ops.source_walls[source.source.wall]
        beta = params.beta
        flux = np.zeros((len(run.states), wall.n))
        for i, s in enumerate(run.states):
            g, gt = source(s.t)
            flux[i] = g + beta * gt
        if rate:
            dt = run.config.dt
            frate = np.gradient(flux, dt, axis=0)
            for i, s in enumerate(run.states):
                vals[i] += s.utt[wall.nodes] @ (wall.B_local @ frate[i])
        else:
            for i, s in enumerate(run.states):
                vals[i] += s.ut[wall.nodes] @ (wall.B_local @ flux[i])
    return vals


def _trapz_cum(vals: np.ndarray, dt: float) -> np.ndarray:
    return np.concatenate([[0.0],
                           np.cumsum(0.5 * dt * (vals[:-1] + vals[1:]))])


def identity_residual(which: str, run: RunResult,
                      ops: DiscreteOperators) -> np.ndarray:
    """Left minus right side of an energy identity, per snapshot.

    'id0' tests the u_t multiplier identity, 'id1' its time-differentiated
    analog, 'id4' the -lap(u) multiplier identity.  All time integrals are
    trapezoidal, so residuals decay at O(dt^2) plus solver tolerance.
    """
    _require_every_step(run)
    params = run.config.params
    g = params.gamma
    beta = params.beta
    dt = run.config.dt
    K = ops.stiffness
    n = len(run.states)
    source = _source_eval(run.config)

    if which == "id0":
        e0 = np.array([energy(0, s, params, ops) for s in run.states])
        dissip = np.array([beta * (s.ut @ (K @ s.ut)) for s in run.states])
        cum_dis = _trapz_cum(dissip, dt)
        cubic = np.array([g * ops.quad_integral(ops.quad_values(s.ut) ** 3)
                          for s in run.states])
        cum_cubic = _trapz_cum(cubic, dt)
        work = _boundary_work_series(run, ops, rate=False)
        cum_work = _trapz_cum(work, dt)
        return (e0 + cum_dis) - (e0[0] + cum_cubic + cum_work)

    if which == "id1":
        e1 = np.array([energy(1, s, params, ops) for s in run.states])
        dissip = np.array([beta * (s.utt @ (K @ s.utt))
                           for s in run.states])
        cum_dis = _trapz_cum(dissip, dt)
        interior = np.zeros(n)
        for i, s in enumerate(run.states):
            vt = ops.quad_values(s.ut)
            att = ops.quad_values(s.utt)
            # (f - alpha_t/2) u_tt^2 + f_t u_t u_tt with f = 2*gamma*u_t
            interior[i] = ops.quad_integral(5.0 * g * vt * att**2)
        cum_in = _trapz_cum(interior, dt)
        work = _boundary_work_series(run, ops, rate=True)
        cum_work = _trapz_cum(work, dt)
        return (e1 + cum_dis) - (e1[0] + cum_in + cum_work)

    if which == "id4":
        laps = [discrete_laplacian(s, ops, params, source)
                for s in run.states]
        lap_sq = np.array([q @ (ops.mass @ q) for q in laps])
        cum_lap = _trapz_cum(lap_sq, dt)
        rhs_rate = np.zeros(n)
        for i, s in enumerate(run.states):
            a_gp = ops.quad_values(alpha_coeff(s.u, params))
            att = ops.quad_values(s.utt)
            vt = ops.quad_values(s.ut)
            lap_gp = ops.quad_values(laps[i])
            rhs_rate[i] = ops.quad_integral(
                (a_gp * att - 2.0 * g * vt * vt) * lap_gp)
        cum_rhs = _trapz_cum(rhs_rate, dt)
        return cum_lap + beta / 2.0 * (lap_sq - lap_sq[0]) - cum_rhs

    raise ValueError("which must be one of id0, id1, id4")


def write_energy_csv(report: EnergyReport, path) -> None:
    """CSV with t first, then E0..E4, dissipations and any residuals."""
    cols = ["t"] + [f"E{k}" for k in range(5)] + ["D_int", "D_bnd"]
    data = [report.t] + [report.e[:, k] for k in range(5)] + \
        [report.dissip_interior, report.dissip_boundary]
    for name, vals in sorted(report.residuals.items()):
        cols.append(f"res_{name}")
        data.append(vals)
    arr = np.column_stack(data)
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in arr:
            fh.write(",".join(f"{x:.17e}" for x in row) + "\n")
