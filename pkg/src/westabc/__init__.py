"""Westervelt-equation simulation with nonlinear absorbing boundaries."""

from .boundary import (AbcSpec, BoundaryTrace, em_flux, mu_eval, pd_flux_1d,
                       ps_beta_flux, ps_flux_1d, ps_flux_2d)
from .core import (AbcSingularError, DegeneracyError, EvanescentRegimeError,
                   Grid, PhysicalParams, PicardConvergenceError, SimConfig,
                   SourceSpec, Tag, WaveState, build_grid,
                   derive_coefficients, liver_params, nu, time_step)
from .solver import (DiscreteOperators, FrozenTrajectory, RunResult,
                     StepReport, assemble, linearized_run,
                     newmark_system_step, run)

__version__ = "0.1.0"
