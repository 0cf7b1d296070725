"""Physical parameters, grids and state containers for nonlinear acoustics.

The model equation is the Westervelt equation in its pressure form

    (c^-2 - 2*gamma*u) u_tt - lap(u) - beta*lap(u_t) = 2*gamma*(u_t)^2

with sound speed c, acoustic diffusivity b (beta = b/c^2) and nonlinearity
coefficient gamma = beta_a/(rho*c^4).  Everything is SI: pressure in Pa,
lengths in m, times in s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .boundary import AbcSpec


class DegeneracyError(RuntimeError):
    """Raised when the coefficient c^-2 - 2*gamma*u loses positivity."""


class PicardConvergenceError(RuntimeError):
    """Raised when the in-step fixed-point iteration exceeds its cap."""


class EvanescentRegimeError(ValueError):
    """Raised when |eta/(nu*tau)| >= 1, outside the propagating regime."""


class AbcSingularError(RuntimeError):
    """Raised when a boundary-rule solve divides by a vanishing factor."""


class Tag(Enum):
    """Boundary facet role.  A NEUMANN_SOURCE wall without a datum is rigid."""

    NEUMANN_SOURCE = "neumann_source"
    ABSORBING = "absorbing"


@dataclass(frozen=True)
class PhysicalParams:
    """Acoustic medium constants and the derived PDE coefficients.

    Attributes
    ----------
    c : sound speed [m/s]
    rho : mass density [kg/m^3]
    b_over_a : nonlinearity ratio B/A [-]
    alpha_abs : absorption coefficient [Np/m/MHz]
    omega : excitation frequency [Hz]
    beta_a : 1 + (B/A)/2 [-]
    b : acoustic diffusivity [m^2/s]
    beta : b/c^2 [s]
    gamma : beta_a/(rho*c^4) [s^2/(Pa*m^2)]
    """

    c: float
    rho: float
    b_over_a: float
    alpha_abs: float
    omega: float
    beta_a: float
    b: float
    beta: float
    gamma: float

    def with_gamma(self, gamma: float) -> "PhysicalParams":
        """Copy with gamma overridden (e.g. gamma=0 for linear runs)."""
        d = self.__dict__.copy()
        d["gamma"] = gamma
        return PhysicalParams(**d)

    def with_beta(self, beta: float) -> "PhysicalParams":
        """Copy with beta (and b = beta*c^2) overridden."""
        d = self.__dict__.copy()
        d["beta"] = beta
        d["b"] = beta * self.c**2
        return PhysicalParams(**d)

    @property
    def wavelength(self) -> float:
        return self.c / self.omega

    @property
    def degeneracy_threshold(self) -> float:
        """Pressure at which c^-2 - 2*gamma*u hits zero (inf for gamma=0)."""
        if self.gamma == 0.0:
            return math.inf
        return 1.0 / (self.c**2 * 2.0 * self.gamma)


def derive_coefficients(c: float, rho: float, b_over_a: float,
                        alpha_abs: float, omega: float) -> PhysicalParams:
    """Build PhysicalParams from medium constants.

    The absorption coefficient is per MHz, so the diffusivity is

        b = 2 * (alpha_abs * omega/1e6) * c^3 / (2*pi*omega)^2

    and beta = b/c^2, gamma = (1 + (B/A)/2)/(rho*c^4).
    """
    if c <= 0 or rho <= 0 or omega <= 0:
        raise ValueError("c, rho and omega must be positive")
    if b_over_a < 0 or alpha_abs < 0:
        raise ValueError("B/A and alpha_abs must be nonnegative")
    beta_a = 1.0 + b_over_a / 2.0
    alpha_np = alpha_abs * (omega / 1.0e6)  # Np/m at this frequency
    b = 2.0 * alpha_np * c**3 / (2.0 * math.pi * omega) ** 2
    beta = b / c**2
    gamma = beta_a / (rho * c**4)
    return PhysicalParams(c=c, rho=rho, b_over_a=b_over_a, alpha_abs=alpha_abs,
                          omega=omega, beta_a=beta_a, b=b, beta=beta, gamma=gamma)


def liver_params(omega: float = 1.0e5) -> PhysicalParams:
    """Human-liver tissue constants commonly used in HIFU simulations."""
    return derive_coefficients(c=1596.0, rho=1050.0, b_over_a=6.8,
                               alpha_abs=4.5, omega=omega)


def nu(v, params: PhysicalParams):
    """sqrt(c^-2 - 2*gamma*v); the wave-slowness factor of the equation.

    Accepts scalars or arrays.  Raises DegeneracyError if the radicand is
    not strictly positive anywhere (the equation stops being of wave type).
    """
    arg = params.c**-2 - 2.0 * params.gamma * np.asarray(v, dtype=float)
    # values within rounding of the positivity boundary count as degenerate
    guard = 4.0 * np.finfo(float).eps * params.c**-2
    if np.min(arg) <= guard:
        raise DegeneracyError(
            f"c^-2 - 2*gamma*v reached {np.min(arg):.3e}; "
            "coefficient positivity lost")
    out = np.sqrt(arg)
    if np.ndim(v) == 0:
        return float(out)
    return out


def alpha_coeff(v, params: PhysicalParams):
    """c^-2 - 2*gamma*v without the positivity check (callers guard)."""
    return params.c**-2 - 2.0 * params.gamma * np.asarray(v, dtype=float)


_SIDES_1D = ("left", "right")
_SIDES_2D = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class Grid:
    """Uniform structured grid on an interval or a rectangle.

    Nodes are origin + i*h per axis.  The element count per axis rounds
    the requested extent up, so the realized extent is n*h >= requested
    (within one element).  Boundary walls carry exactly one Tag each;
    keys are 'left'/'right' (1-d) plus 'bottom'/'top' (2-d).
    """

    dim: int
    extents: tuple            # ((lo, hi),) or ((lo, hi), (lo, hi))
    h: float
    elems: tuple              # elements per axis
    boundary_tags: dict

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("element size must be positive")
        sides = _SIDES_1D if self.dim == 1 else _SIDES_2D
        if set(self.boundary_tags) != set(sides):
            raise ValueError(f"boundary_tags must cover exactly {sides}")

    @property
    def node_counts(self) -> tuple:
        return tuple(n + 1 for n in self.elems)

    @property
    def n_nodes(self) -> int:
        out = 1
        for n in self.node_counts:
            out *= n
        return out

    def axis_coords(self, axis: int) -> np.ndarray:
        lo = self.extents[axis][0]
        return lo + self.h * np.arange(self.elems[axis] + 1)

    def coords(self) -> np.ndarray:
        """Node coordinates, shape (n_nodes, dim); x varies fastest."""
        if self.dim == 1:
            return self.axis_coords(0)[:, None]
        x = self.axis_coords(0)
        y = self.axis_coords(1)
        X, Y = np.meshgrid(x, y, indexing="xy")  # row-major in y
        return np.column_stack([X.ravel(), Y.ravel()])

    def node_index(self, i: int, j: int = 0) -> int:
        nx = self.elems[0] + 1
        return j * nx + i

    def wall_nodes(self, side: str) -> np.ndarray:
        """Global node indices along a wall, ordered along the wall."""
        nx = self.elems[0] + 1
        if self.dim == 1:
            return np.array([0 if side == "left" else self.elems[0]])
        ny = self.elems[1] + 1
        if side == "left":
            return np.arange(ny) * nx
        if side == "right":
            return np.arange(ny) * nx + (nx - 1)
        if side == "bottom":
            return np.arange(nx)
        if side == "top":
            return (ny - 1) * nx + np.arange(nx)
        raise ValueError(f"unknown side {side!r}")

    def absorbing_sides(self):
        return [s for s, t in self.boundary_tags.items() if t is Tag.ABSORBING]

    def source_sides(self):
        return [s for s, t in self.boundary_tags.items()
                if t is Tag.NEUMANN_SOURCE]


def build_grid(extents, params: PhysicalParams, elems_per_wavelength: float,
               boundary_tags: Optional[dict] = None) -> Grid:
    """Mesh the given extents at h = wavelength/elems_per_wavelength.

    extents is (lo, hi) in 1-d or ((lox, hix), (loy, hiy)) in 2-d.  Element
    counts per axis are ceil(extent/h) so resolution never drops below the
    requested density.  Walls default to NEUMANN_SOURCE (rigid if no datum).
    """
    if elems_per_wavelength < 2:
        raise ValueError("need at least 2 elements per wavelength")
    ext = np.asarray(extents, dtype=float)
    if ext.ndim == 1:
        ext = ext[None, :]
    dim = ext.shape[0]
    if dim not in (1, 2):
        raise ValueError("only 1-d and 2-d grids are supported")
    if np.any(ext[:, 1] <= ext[:, 0]):
        raise ValueError("degenerate extents")
    h = params.wavelength / elems_per_wavelength
    elems = tuple(int(math.ceil((hi - lo) / h - 1e-12)) for lo, hi in ext)
    sides = _SIDES_1D if dim == 1 else _SIDES_2D
    tags = {s: Tag.NEUMANN_SOURCE for s in sides}
    if boundary_tags:
        for s, t in boundary_tags.items():
            if s not in sides:
                raise ValueError(f"unknown side {s!r}")
            tags[s] = t
    return Grid(dim=dim, extents=tuple((lo, lo + n * h) for (lo, _), n
                                       in zip(ext, elems)),
                h=h, elems=elems, boundary_tags=tags)


def time_step(omega: float, samples_per_period: float) -> float:
    """dt for the requested number of time samples per excitation period."""
    if omega <= 0 or samples_per_period <= 0:
        raise ValueError("omega and samples_per_period must be positive")
    return 1.0 / (samples_per_period * omega)


@dataclass
class WallState:
    """Per-absorbing-wall boundary unknowns carried through time.

    flux is the natural-trace value (u + beta*u_t)_n at each wall node;
    flux_rate its time derivative for rate-form rules; accum the running
    trapezoidal integral of the tangential second-derivative source.
    """

    side: str
    nodes: np.ndarray
    flux: np.ndarray
    flux_rate: np.ndarray
    accum: np.ndarray
    s_last: np.ndarray

    @classmethod
    def zeros(cls, side: str, nodes: np.ndarray) -> "WallState":
        n = len(nodes)
        return cls(side=side, nodes=nodes, flux=np.zeros(n),
                   flux_rate=np.zeros(n), accum=np.zeros(n),
                   s_last=np.zeros(n))

    def copy(self) -> "WallState":
        return WallState(self.side, self.nodes, self.flux.copy(),
                         self.flux_rate.copy(), self.accum.copy(),
                         self.s_last.copy())


@dataclass
class WaveState:
    """Nodal fields at one time level plus boundary accumulators."""

    t: float
    u: np.ndarray
    ut: np.ndarray
    utt: np.ndarray
    walls: dict = field(default_factory=dict)  # side -> WallState

    def copy(self) -> "WaveState":
        return WaveState(t=self.t, u=self.u.copy(), ut=self.ut.copy(),
                         utt=self.utt.copy(),
                         walls={s: w.copy() for s, w in self.walls.items()})

    def min_coeff(self, params: PhysicalParams) -> float:
        return float(np.min(alpha_coeff(self.u, params)))


@dataclass
class SourceSpec:
    """Transducer description; the datum is a Neumann trace in Pa/m.

    shape 'flat' drives the wall uniformly, 'tilted' applies the phase
    delay y*sin(theta)/c along the wall, 'concave' focuses a bottom-wall
    aperture at focal_depth via arc delays.  ramp smoothly switches the
    drive on over ramp_periods and off after off_time (if set).
    """

    shape: str = "flat"          # flat | tilted | concave
    amplitude: float = 1.0       # Pa/m
    wall: str = "left"
    angle_deg: float = 0.0       # tilted only
    aperture: float = 0.0        # concave only [m]
    focal_depth: float = 0.0     # concave only [m]
    ramp: bool = True
    ramp_periods: float = 1.0
    off_time: Optional[float] = None


@dataclass
class SimConfig:
    """Everything one simulation instance needs."""

    params: PhysicalParams
    grid: Grid
    dt: float
    t_final: float
    source: Optional[SourceSpec] = None
    abc: Optional["AbcSpec"] = None
    picard_tol: float = 1.0e-10
    picard_max: int = 50
    snapshot_stride: int = 1
    u0: Optional[np.ndarray] = None
    u1: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_final < self.dt:
            raise ValueError("t_final must cover at least one step")
        if self.picard_tol <= 0:
            raise ValueError("picard_tol must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))
