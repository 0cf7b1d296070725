"""Newmark time integration of the Westervelt equation.

Semi-discrete form (natural boundary terms on the right):

    M(alpha) u'' + K u + beta K u' = Q(2*gamma*(u')^2) + B_N (g + beta*g_t)
                                     + sum_walls B_A flux

with M(alpha) the mass matrix weighted by alpha = c^-2 - 2*gamma*u and K the
stiffness matrix.  Each step uses the average-acceleration Newmark rule; the
variable coefficient, the quadratic right side and the boundary-rule
coefficients are frozen at the previous fixed-point iterate and re-evaluated
until the relative update of u_tt drops below picard_tol.  Boundary rules
enter implicitly through their u_t (or u_tt) factor, which keeps the scheme
unconditionally stable and makes the linear-case energy balance exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .boundary import AbcSpec, damping_coefficient, rate_terms, zeta_damping
from .core import (DegeneracyError, Grid, PhysicalParams,
                   PicardConvergenceError, SimConfig, SourceSpec, Tag,
                   WallState, WaveState, alpha_coeff, nu)
from .fem import (DiscreteOperators, FactorCache, assemble,
                  boundary_damping_data)

__all__ = ["assemble", "DiscreteOperators", "StepReport", "RunResult",
           "newmark_system_step", "WesterveltStepper", "run",
           "linearized_run", "FrozenTrajectory", "initial_acceleration"]


@dataclass
class StepReport:
    """Fixed-point diagnostics for one time step."""

    picard_iters: int
    picard_residual: float
    min_coeff: float
    update_norms: list = field(default_factory=list)


@dataclass
class RunResult:
    """Snapshots and per-step reports of one simulation."""

    config: SimConfig
    times: np.ndarray
    states: list
    reports: list
    node_subset: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def u_series(self) -> np.ndarray:
        return np.stack([s.u for s in self.states])

    def ut_series(self) -> np.ndarray:
        return np.stack([s.ut for s in self.states])

    def utt_series(self) -> np.ndarray:
        return np.stack([s.utt for s in self.states])

    @property
    def final(self) -> WaveState:
        return self.states[-1]


def newmark_system_step(M, C, K, b, u, v, a, dt,
                        beta_n: float = 0.25, gamma_n: float = 0.5):
    """One Newmark step for M u'' + C u' + K u = b with dense operators.

    Average acceleration by default (unconditionally stable, conserves the
    linear discrete energy up to the damping work).
    """
    M, C, K = (np.atleast_2d(np.asarray(X, dtype=float)) for X in (M, C, K))
    u, v, a, b = (np.atleast_1d(np.asarray(x, dtype=float))
                  for x in (u, v, a, b))
    u_pred = u + dt * v + dt**2 * (0.5 - beta_n) * a
    v_pred = v + dt * (1.0 - gamma_n) * a
    A = M + gamma_n * dt * C + beta_n * dt**2 * K
    rhs = b - C @ v_pred - K @ u_pred
    a1 = np.linalg.solve(A, rhs)
    u1 = u_pred + beta_n * dt**2 * a1
    v1 = v_pred + gamma_n * dt * a1
    return u1, v1, a1


@dataclass
class FrozenTrajectory:
    """Time-indexed frozen field (v, v_t) for the linearized solve."""

    v: np.ndarray    # (n_levels, n_nodes)
    vt: np.ndarray

    @classmethod
    def constant(cls, u0: np.ndarray, n_steps: int) -> "FrozenTrajectory":
        v = np.tile(np.asarray(u0, dtype=float), (n_steps + 1, 1))
        return cls(v=v, vt=np.zeros_like(v))

    @classmethod
    def from_run(cls, run: RunResult) -> "FrozenTrajectory":
        return cls(v=run.u_series().copy(), vt=run.ut_series().copy())

    def check_degeneracy(self, params: PhysicalParams) -> None:
        if np.min(alpha_coeff(self.v, params)) <= 0.0:
            raise DegeneracyError("frozen field violates the coefficient "
                                  "positivity guard")


class SourceEval:
    """Neumann datum g(x, t) and its time derivative on the source wall."""

    def __init__(self, source: SourceSpec, grid: Grid,
                 params: PhysicalParams):
        self.source = source
        self.params = params
        self.nodes = grid.wall_nodes(source.wall)
        coords = grid.coords()
        if grid.dim == 1:
            tang = np.zeros(1)
        elif source.wall in ("left", "right"):
            tang = coords[self.nodes, 1]
        else:
            tang = coords[self.nodes, 0]
        self.omega_ang = 2.0 * math.pi * params.omega
        self.phase = np.zeros_like(tang)
        self.mask = np.ones_like(tang)
        if source.shape == "tilted":
            th = math.radians(source.angle_deg)
            self.phase = -self.omega_ang * tang * math.sin(th) / params.c
        elif source.shape == "concave":
            lo, hi = tang.min(), tang.max()
            xc = 0.5 * (lo + hi)
            F = source.focal_depth
            d = np.sqrt((tang - xc) ** 2 + F**2)
            self.phase = self.omega_ang * (d - F) / params.c
            self.mask = (np.abs(tang - xc) <=
                         source.aperture / 2.0 + 1e-12).astype(float)
        elif source.shape != "flat":
            raise ValueError(f"unknown source shape {source.shape!r}")
        self.ramp_time = (source.ramp_periods / params.omega
                          if source.ramp else 0.0)

    def _ramp(self, t: float):
        if self.ramp_time <= 0.0 or t >= self.ramp_time:
            return 1.0, 0.0
        r = math.sin(math.pi * t / (2.0 * self.ramp_time)) ** 2
        rdot = (math.pi / (2.0 * self.ramp_time)) * \
            math.sin(math.pi * t / self.ramp_time)
        return r, rdot

    def __call__(self, t: float):
        src = self.source
        if t < 0.0 or (src.off_time is not None and t >= src.off_time):
            z = np.zeros_like(self.phase)
            return z, z.copy()
        A = src.amplitude
        r, rdot = self._ramp(t)
        arg = self.omega_ang * t + self.phase
        s = np.sin(arg)
        c = np.cos(arg)
        g = A * r * s * self.mask
        gt = A * (rdot * s + r * self.omega_ang * c) * self.mask
        return g, gt


def initial_acceleration(config: SimConfig, ops: DiscreteOperators,
                         u0: np.ndarray, u1: np.ndarray,
                         wall_flux: Optional[dict] = None,
                         source: Optional[SourceEval] = None,
                         vt0: Optional[np.ndarray] = None) -> np.ndarray:
    """Solve the t=0 equation for u_tt, consistent with all boundary data.

    wall_flux maps absorbing sides to the nodal natural-flux values at t=0;
    vt0 overrides the quadratic right side's velocity factor (used by the
    frozen-coefficient path).
    """
    p = config.params
    alpha0 = alpha_coeff(u0, p)
    if np.min(alpha0) <= 0.0:
        raise DegeneracyError("initial data violate coefficient positivity")
    M_alpha = p.c**-2 * ops.mass - 2.0 * p.gamma * ops.weighted_mass(u0)
    rhs = -(ops.stiffness @ u0) - p.beta * (ops.stiffness @ u1)
    wfac = u1 if vt0 is None else vt0
    rhs += ops.weighted_load(2.0 * p.gamma * wfac, u1)
    if source is not None:
        g, gt = source(0.0)
        wall = ops.source_walls[config.source.wall]
        contrib = wall.B_local @ (g + p.beta * gt)
        wall.scatter(contrib, rhs)
    if wall_flux:
        for side, fvec in wall_flux.items():
            wall = ops.walls[side]
            wall.scatter(wall.B_local @ fvec, rhs)
    return spla.spsolve(M_alpha.tocsc(), rhs)


class WesterveltStepper:
    """Owns the assembled operators and advances one WaveState in time."""

    def __init__(self, config: SimConfig,
                 ops: Optional[DiscreteOperators] = None,
                 frozen: Optional[FrozenTrajectory] = None, zeta: int = 0):
        self.config = config
        self.params = config.params
        self.grid = config.grid
        self.dt = config.dt
        self.ops = ops if ops is not None else assemble(config.grid)
        self.frozen = frozen
        self.zeta = zeta
        self.spec = config.abc
        if self.spec is not None and frozen is None:
            self.spec.validate(self.grid.dim)
        if frozen is not None:
            frozen.check_degeneracy(self.params)
            if zeta not in (0, 1):
                raise ValueError("zeta must be 0 or 1")
        if self.grid.absorbing_sides() and self.spec is None \
                and frozen is None:
            raise ValueError("grid has absorbing walls but no ABC spec")
        self.source = None
        if config.source is not None:
            if config.source.wall not in self.grid.source_sides():
                raise ValueError("source wall is not tagged NEUMANN_SOURCE")
            self.source = SourceEval(config.source, self.grid, self.params)
        self.factor = FactorCache()
        self._elem_stiff_coeff = None
        p = self.params
        self._is_rate = (self.spec is not None
                         and self.spec.is_rate(self.grid.dim)
                         and frozen is None)
        self._needs_iter = frozen is None and (
            p.gamma != 0.0 or (self.grid.dim == 2 and self._is_rate))
        self.corner_order0_count = sum(
            int(np.sum(w.corner)) for w in self.ops.walls.values()
        ) if self._is_rate and self.grid.dim == 2 else 0

    # -- boundary helpers ---------------------------------------------------

    def _tangential_source(self, wall, u, v, a):
        """Series whose time integral feeds the first-order 2-d rule."""
        spec = self.spec
        if self.grid.dim == 1 or spec is None or not self._is_rate \
                or spec.family == "EM":
            return np.zeros(wall.n)
        beta = self.params.beta
        if spec.family == "PS":
            return wall.tangential_second(u)
        ub = u + beta * v
        if spec.t_bearing:
            ubt = v + beta * a
            return wall.tangential_second(ub) + \
                beta * wall.tangential_second(ubt)
        return (1.0 + beta) * wall.tangential_second(ub)

    def _build_trace(self, wall, u, v, a, f_est, accum_est, a_prev):
        from .boundary import BoundaryTrace
        nodes = wall.nodes
        tr = BoundaryTrace(
            u=u[nodes], ut=v[nodes], utt=a[nodes],
            un=wall.normal_derivative(u), flux=f_est,
            utn=wall.normal_derivative(v),
            unn=wall.second_normal_derivative(u),
            u_thth=wall.tangential_second(u),
            s=self._tangential_source(wall, u, v, a),
            accum=accum_est,
            uttt=(a[nodes] - a_prev[nodes]) / self.dt)
        return tr

    def _corner_damping(self, u_wall: np.ndarray) -> np.ndarray:
        """Order-0 coefficient used where a rate rule drops order."""
        if self.spec.family == "EM":
            return np.full(len(u_wall), 1.0 / self.params.c)
        return damping_coefficient(self.spec.family, 0, u_wall, self.params)

    def _wall_coefficients(self, wall, trace):
        """(c_v, c_a, G, alg_mask) for one wall at the current iterate.

        Algebraic nodes contribute damping c_v on u_t; rate nodes damping
        c_a on u_tt plus the explicit remainder G of the flux rate.
        """
        n = wall.n
        p = self.params
        if not self._is_rate:
            c_v = damping_coefficient(self.spec.family, self.spec.order,
                                      trace.u, p)
            return c_v, np.zeros(n), np.zeros(n), np.ones(n, dtype=bool)
        nu_hat, Gr = rate_terms(self.spec, self.grid.dim, trace, p)
        alg = wall.corner
        c_a = np.where(alg, 0.0, nu_hat)
        G = np.where(alg, 0.0, Gr)
        c_v = np.where(alg, self._corner_damping(trace.u), 0.0)
        return c_v, c_a, G, alg

    # -- initial state ------------------------------------------------------

    def initial_state(self) -> WaveState:
        n = self.grid.n_nodes
        cfg = self.config
        u0 = np.zeros(n) if cfg.u0 is None else np.asarray(cfg.u0, float)
        u1 = np.zeros(n) if cfg.u1 is None else np.asarray(cfg.u1, float)
        p = self.params
        walls = {}
        wall_flux = {}
        for side, wall in self.ops.walls.items():
            ws = WallState.zeros(side, wall.nodes)
            if self.frozen is not None:
                fac = zeta_damping(self.frozen.v[0][wall.nodes], self.zeta, p)
                ws.flux = -fac * u1[wall.nodes]
            elif not self._is_rate:
                c = damping_coefficient(self.spec.family, self.spec.order,
                                        u0[wall.nodes], p)
                ws.flux = -c * u1[wall.nodes]
            else:
                ub = u0 + p.beta * u1
                ws.flux = wall.normal_derivative(ub)
                if np.any(wall.corner):
                    c0 = damping_coefficient(
                        self.spec.family if self.spec.family != "EM"
                        else "EM", 0, u0[wall.nodes], p) \
                        if self.spec.family != "EM" else \
                        np.full(wall.n, 1.0 / p.c)
                    ws.flux = np.where(wall.corner,
                                       -c0 * u1[wall.nodes], ws.flux)
            walls[side] = ws
            wall_flux[side] = ws.flux
        vt0 = self.frozen.vt[0] if self.frozen is not None else None
        a0 = initial_acceleration(cfg, self.ops, u0, u1,
                                  wall_flux=wall_flux, source=self.source,
                                  vt0=vt0)
        state = WaveState(t=0.0, u=u0, ut=u1, utt=a0, walls=walls)
        # now the rate and tangential data are consistent with a0
        for side, wall in self.ops.walls.items():
            ws = walls[side]
            if self._is_rate:
                tr = self._build_trace(wall, u0, u1, a0, ws.flux,
                                       ws.accum, a0)
                nu_hat, G = rate_terms(self.spec, self.grid.dim, tr, p)
                ws.flux_rate = np.where(wall.corner, 0.0,
                                        -nu_hat * a0[wall.nodes] + G)
            ws.s_last = self._tangential_source(wall, u0, u1, a0)
        return state

    # -- stepping -----------------------------------------------------------

    def step(self, state: WaveState, step_index: int):
        cfg, p, dt = self.config, self.params, self.dt
        ops = self.ops
        t1 = state.t + dt
        u_pred = state.u + dt * state.ut + dt**2 / 4.0 * state.utt
        v_pred = state.ut + dt / 2.0 * state.utt

        K = ops.stiffness
        Ku_pred = K @ u_pred
        Kv_pred = K @ v_pred

        f_tilde = {}
        for side, ws in state.walls.items():
            f_tilde[side] = ws.flux + dt / 2.0 * ws.flux_rate

        if self.frozen is not None:
            v_new = self.frozen.v[step_index + 1]
            vt_new = self.frozen.vt[step_index + 1]

        src_vec = None
        if self.source is not None:
            g, gt = self.source(t1)
            wall = ops.source_walls[cfg.source.wall]
            src_vec = np.zeros(self.grid.n_nodes)
            wall.scatter(wall.B_local @ (g + p.beta * gt), src_vec)

        a_lag = state.utt.copy()
        f_est = {side: ws.flux + dt * ws.flux_rate
                 for side, ws in state.walls.items()}
        stiff_coeff = dt**2 / 4.0 + p.beta * dt / 2.0
        report_norms = []
        a_new = a_lag
        residual = 0.0
        n_iter_cap = cfg.picard_max if self._needs_iter else 1

        for it in range(1, n_iter_cap + 1):
            u_lag = u_pred + dt**2 / 4.0 * a_lag
            v_lag = v_pred + dt / 2.0 * a_lag
            min_coeff = float(np.min(alpha_coeff(u_lag, p)))
            if min_coeff <= 0.0:
                raise DegeneracyError(
                    f"coefficient positivity lost at t={t1:.6e}")

            # interior element data
            elem = p.c**-2 * ops.elem_mass + stiff_coeff * ops.elem_stiff
            if p.gamma != 0.0:
                if self.frozen is None:
                    elem = elem - 2.0 * p.gamma * ops.weighted_mass_data(
                        u_lag)
                else:
                    elem = elem - 2.0 * p.gamma * \
                        ops.weighted_mass_data(v_new) - dt / 2.0 * \
                        ops.weighted_mass_data(2.0 * p.gamma * vt_new)

            rhs = -Ku_pred - p.beta * Kv_pred
            if src_vec is not None:
                rhs = rhs + src_vec
            if p.gamma != 0.0:
                if self.frozen is None:
                    rhs = rhs + ops.weighted_load(2.0 * p.gamma * v_lag,
                                                  v_lag)
                else:
                    rhs = rhs + ops.weighted_load(2.0 * p.gamma * vt_new,
                                                  v_pred)

            bdata = [elem]
            for side, wall in ops.walls.items():
                ws = state.walls[side]
                if self.frozen is not None:
                    fac = zeta_damping(v_new[wall.nodes], self.zeta, p)
                    c_v, c_a, G = fac, np.zeros(wall.n), np.zeros(wall.n)
                    alg = np.ones(wall.n, dtype=bool)
                    f_base = np.zeros(wall.n)
                else:
                    acc_est = ws.accum + dt / 2.0 * (
                        ws.s_last + self._tangential_source(
                            wall, u_lag, v_lag, a_lag))
                    tr = self._build_trace(wall, u_lag, v_lag, a_lag,
                                           f_est[side], acc_est, state.utt)
                    c_v, c_a, G, alg = self._wall_coefficients(wall, tr)
                    f_base = np.where(alg, 0.0, f_tilde[side])
                coeff = c_v + c_a
                if self.grid.dim == 1:
                    bdata.append(coeff.reshape(1, 1, 1) * dt / 2.0)
                else:
                    e_m = self.grid.h / 6.0 * np.array([[2.0, 1.0],
                                                        [1.0, 2.0]])
                    cl = coeff[wall.edge_conn]
                    bdata.append(dt / 2.0 * e_m[None, :, :] * cl[:, None, :])
                wall_rhs = wall.B_local @ (
                    f_base + dt / 2.0 * G - c_v * v_pred[wall.nodes])
                wall.scatter(wall_rhs, rhs)
                # refresh the flux estimate for the next iterate's trace
                v_wall_est = v_pred[wall.nodes] + \
                    dt / 2.0 * a_lag[wall.nodes]
                f_est[side] = np.where(
                    alg, -c_v * v_wall_est,
                    f_base + dt / 2.0 * (-c_a * a_lag[wall.nodes] + G))

            A = ops.pattern.assemble(bdata)
            a_new = self.factor.solve(A, rhs)

            if not self._needs_iter:
                residual = 0.0
                break
            diff = float(np.linalg.norm(a_new - a_lag))
            na = float(np.linalg.norm(a_new))
            residual = diff / na if na > 0.0 else diff
            report_norms.append(residual)
            a_lag = a_new
            if residual <= cfg.picard_tol:
                break
        else:
            raise PicardConvergenceError(
                f"fixed-point iteration exceeded {cfg.picard_max} at "
                f"t={t1:.6e} (residual {residual:.3e})")

        u1 = u_pred + dt**2 / 4.0 * a_new
        v1 = v_pred + dt / 2.0 * a_new
        min_coeff = float(np.min(alpha_coeff(u1, p)))
        if min_coeff <= 0.0:
            raise DegeneracyError(
                f"coefficient positivity lost at t={t1:.6e}")

        new_walls = {}
        for side, wall in ops.walls.items():
            ws = state.walls[side]
            nw = ws.copy()
            if self.frozen is not None:
                fac = zeta_damping(v_new[wall.nodes], self.zeta, p)
                nw.flux = -fac * v1[wall.nodes]
                nw.flux_rate = (nw.flux - ws.flux) / dt
            elif not self._is_rate:
                c = damping_coefficient(self.spec.family, self.spec.order,
                                        u1[wall.nodes], p)
                nw.flux = -c * v1[wall.nodes]
                nw.flux_rate = (nw.flux - ws.flux) / dt
            else:
                s_new = self._tangential_source(wall, u1, v1, a_new)
                acc_new = ws.accum + dt / 2.0 * (ws.s_last + s_new)
                tr = self._build_trace(wall, u1, v1, a_new, f_est[side],
                                       acc_new, state.utt)
                nu_hat, G = rate_terms(self.spec, self.grid.dim, tr, p)
                rate = np.where(wall.corner, 0.0,
                                -nu_hat * a_new[wall.nodes] + G)
                flux = f_tilde[side] + dt / 2.0 * rate
                if np.any(wall.corner):
                    c0 = damping_coefficient(
                        self.spec.family if self.spec.family != "EM"
                        else "EM", 0, u1[wall.nodes], p) \
                        if self.spec.family != "EM" else \
                        np.full(wall.n, 1.0 / p.c)
                    cflux = -c0 * v1[wall.nodes]
                    flux = np.where(wall.corner, cflux, flux)
                    rate = np.where(wall.corner, (cflux - ws.flux) / dt,
                                    rate)
                nw.flux = flux
                nw.flux_rate = rate
                nw.accum = acc_new
                nw.s_last = s_new
            new_walls[side] = nw

        new_state = WaveState(t=t1, u=u1, ut=v1, utt=a_new, walls=new_walls)
        report = StepReport(picard_iters=it, picard_residual=residual,
                            min_coeff=min_coeff, update_norms=report_norms)
        return new_state, report


def _restrict(state: WaveState, subset: np.ndarray) -> WaveState:
    return WaveState(t=state.t, u=state.u[subset].copy(),
                     ut=state.ut[subset].copy(),
                     utt=state.utt[subset].copy(), walls={})


def run(config: SimConfig, node_subset: Optional[np.ndarray] = None,
        ops: Optional[DiscreteOperators] = None) -> RunResult:
    """Time loop from the initial data to t_final.

    Snapshots are stored every snapshot_stride steps (plus the final one);
    with node_subset given, snapshots are restricted to those nodes and
    wall states are dropped (used for reference solutions).
    """
    stepper = WesterveltStepper(config, ops=ops)
    return _drive(stepper, config, node_subset)


def linearized_run(config: SimConfig, frozen: FrozenTrajectory,
                   zeta: int = 0,
                   ops: Optional[DiscreteOperators] = None) -> RunResult:
    """Frozen-coefficient solve: one linear system per step, boundary
    factor (2*alpha - zeta*gamma*v)/(2*alpha + zeta*gamma*v)*sqrt(alpha)."""
    if frozen.v.shape[0] < config.n_steps + 1:
        raise ValueError("frozen trajectory does not cover the time grid")
    stepper = WesterveltStepper(config, ops=ops, frozen=frozen, zeta=zeta)
    return _drive(stepper, config, None)


def _drive(stepper: WesterveltStepper, config: SimConfig,
           node_subset) -> RunResult:
    state = stepper.initial_state()
    keep = (lambda s: _restrict(s, node_subset)) if node_subset is not None \
        else (lambda s: s.copy())
    times = [0.0]
    states = [keep(state)]
    reports = []
    n_steps = config.n_steps
    stride = max(1, int(config.snapshot_stride))
    for k in range(n_steps):
        state, rep = stepper.step(state, k)
        reports.append(rep)
        if (k + 1) % stride == 0 or (k + 1) == n_steps:
            times.append(state.t)
            states.append(keep(state))
    meta = {"corner_order0_nodes": stepper.corner_order0_count,
            "n_factorizations": stepper.factor.n_factorizations}
    return RunResult(config=config, times=np.asarray(times), states=states,
                     reports=reports, node_subset=node_subset, meta=meta)
