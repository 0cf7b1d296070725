"""Finite-element assembly on structured grids.

Piecewise-linear elements in 1-d, bilinear quadrilaterals in 2-d, exact
integration of the affine/bilinear products.  The coefficient-weighted mass
matrix (the weight interpolated in the same basis) is assembled every
fixed-point iterate, so the sparsity pattern and the element third-moment
tensors are precomputed once and reused.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .core import Grid, Tag


# ---------------------------------------------------------------------------
# reference element matrices
# ---------------------------------------------------------------------------

def _p1_matrices(h: float):
    """(mass, stiffness, third_moment) for a P1 segment of length h.

    third_moment[k, i, j] = integral of phi_k*phi_i*phi_j over the element.
    """
    m = h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    k = 1.0 / h * np.array([[1.0, -1.0], [-1.0, 1.0]])
    t0 = h * np.array([[1 / 4, 1 / 12], [1 / 12, 1 / 12]])
    t1 = h * np.array([[1 / 12, 1 / 12], [1 / 12, 1 / 4]])
    return m, k, np.stack([t0, t1])


def _q1_matrices(h: float):
    """Same data for an h-by-h bilinear quad, tensor node order
    (0,0),(1,0),(0,1),(1,1)."""
    m1, k1, t1 = _p1_matrices(h)
    mass = np.kron(m1, m1)
    stiff = np.kron(m1, k1) + np.kron(k1, m1)
    third = np.empty((4, 4, 4))
    for ky in range(2):
        for kx in range(2):
            third[2 * ky + kx] = np.kron(t1[ky], t1[kx])
    return mass, stiff, third


_GAUSS_1D = (np.array([-1.0, 1.0]) / np.sqrt(3.0) * 0.5 + 0.5,
             np.array([0.5, 0.5]))  # two-point rule on [0, 1]


def _gauss_points(dim: int):
    """Gauss points/weights and basis values on the reference element."""
    xg, wg = _GAUSS_1D
    if dim == 1:
        pts = xg[:, None]
        w = wg
        shapes = np.stack([1.0 - xg, xg], axis=1)       # (n_gp, 2)
        return pts, w, shapes
    X, Y = np.meshgrid(xg, xg, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    w = np.outer(wg, wg).ravel()
    sx = np.stack([1.0 - X.ravel(), X.ravel()], axis=1)
    sy = np.stack([1.0 - Y.ravel(), Y.ravel()], axis=1)
    shapes = np.empty((len(w), 4))
    for ky in range(2):
        for kx in range(2):
            shapes[:, 2 * ky + kx] = sy[:, ky] * sx[:, kx]
    return pts, w, shapes


# ---------------------------------------------------------------------------
# pattern-preserving assembly
# ---------------------------------------------------------------------------

class MatrixPattern:
    """CSR assembly with a frozen sparsity pattern.

    Blocks are connectivity arrays (n_entities, m); assemble() takes one
    dense (n_entities, m, m) data array per block and scatters the summed
    values into the fixed pattern.
    """

    def __init__(self, blocks, n_nodes: int):
        self.blocks = [np.asarray(b, dtype=np.int64) for b in blocks]
        self.n_nodes = n_nodes
        rows, cols = [], []
        for conn in self.blocks:
            n_e, m = conn.shape
            rows.append(np.repeat(conn, m, axis=1).ravel())
            cols.append(np.tile(conn, (1, m)).ravel())
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        perm = np.lexsort((cols, rows))
        rs, cs = rows[perm], cols[perm]
        new = np.empty(len(rs), dtype=bool)
        new[0] = True
        new[1:] = (rs[1:] != rs[:-1]) | (cs[1:] != cs[:-1])
        self._perm = perm
        self._starts = np.flatnonzero(new)
        self._indices = cs[self._starts].astype(np.int32)
        counts = np.bincount(rs[self._starts], minlength=n_nodes)
        self._indptr = np.concatenate([[0], np.cumsum(counts)]).astype(
            np.int32)

    def assemble(self, block_data) -> sp.csr_matrix:
        flat = np.concatenate([np.asarray(d, dtype=float).ravel()
                               for d in block_data])
        vals = np.add.reduceat(flat[self._perm], self._starts)
        return sp.csr_matrix((vals, self._indices, self._indptr),
                             shape=(self.n_nodes, self.n_nodes))


@dataclass
class WallOps:
    """Per-wall discrete operators for boundary terms.

    nodes are ordered along the wall; B_local is the consistent trace mass
    (a scalar 1 in 1-d); layers[k] holds the global node index at inward
    distance k*h from each wall node; d2 applies the tangential second
    difference (zero rows at the wall endpoints); corner marks endpoint
    nodes shared with a transverse wall.
    """

    side: str
    nodes: np.ndarray
    h: float
    B_local: sp.csr_matrix
    edge_conn: np.ndarray        # local connectivity along the wall
    layers: np.ndarray           # (depth+1, n_wall) global indices
    d2: Optional[sp.csr_matrix]
    corner: np.ndarray           # bool mask

    @property
    def n(self) -> int:
        return len(self.nodes)

    def scatter(self, vec_local: np.ndarray, out: np.ndarray) -> None:
        out[self.nodes] += vec_local

    def normal_derivative(self, field: np.ndarray) -> np.ndarray:
        """Second-order one-sided outward normal derivative."""
        L = self.layers
        if L.shape[0] >= 3:
            return (3.0 * field[L[0]] - 4.0 * field[L[1]] + field[L[2]]) / \
                (2.0 * self.h)
        return (field[L[0]] - field[L[1]]) / self.h

    def second_normal_derivative(self, field: np.ndarray) -> np.ndarray:
        L = self.layers
        if L.shape[0] >= 4:
            return (2.0 * field[L[0]] - 5.0 * field[L[1]]
                    + 4.0 * field[L[2]] - field[L[3]]) / self.h**2
        if L.shape[0] >= 3:
            return (field[L[0]] - 2.0 * field[L[1]] + field[L[2]]) / \
                self.h**2
        return np.zeros(self.n)

    def tangential_second(self, field: np.ndarray) -> np.ndarray:
        if self.d2 is None:
            return np.zeros(self.n)
        return self.d2 @ field[self.nodes]


def _edge_mass_local(n: int, h: float) -> sp.csr_matrix:
    if n == 1:
        return sp.csr_matrix(np.array([[1.0]]))
    main = np.full(n, 2.0 * h / 3.0)
    main[0] = main[-1] = h / 3.0
    off = np.full(n - 1, h / 6.0)
    return sp.csr_matrix(sp.diags([off, main, off], [-1, 0, 1]))


def _d2_local(n: int, h: float) -> Optional[sp.csr_matrix]:
    if n < 3:
        return None
    d = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        d[i, i - 1] = 1.0 / h**2
        d[i, i] = -2.0 / h**2
        d[i, i + 1] = 1.0 / h**2
    return d.tocsr()


def _wall_layers(grid: Grid, side: str, depth: int) -> np.ndarray:
    nodes = grid.wall_nodes(side)
    if grid.dim == 1:
        nmax = grid.elems[0]
        depth = min(depth, nmax)
        step = 1 if side == "left" else -1
        return np.stack([nodes + k * step for k in range(depth + 1)])
    nx1 = grid.elems[0] + 1
    if side in ("left", "right"):
        depth = min(depth, grid.elems[0])
        step = 1 if side == "left" else -1
    else:
        depth = min(depth, grid.elems[1])
        step = nx1 if side == "bottom" else -nx1
    return np.stack([nodes + k * step for k in range(depth + 1)])


@dataclass
class DiscreteOperators:
    """Assembled spatial operators for one grid.

    mass and stiffness are the plain P1/Q1 matrices; boundary_mass maps each
    absorbing side to its trace-mass operator.  weighted_mass(w) returns the
    mass matrix with the nodal field w interpolated into the integrand;
    weighted_load(w, v) the vector with entries int w_h v_h phi_i.
    """

    grid: Grid
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    boundary_mass: dict
    conn: np.ndarray
    third: np.ndarray
    pattern: MatrixPattern
    walls: dict                  # absorbing side -> WallOps
    source_walls: dict           # neumann side -> WallOps
    elem_mass: np.ndarray = field(repr=False, default=None)
    elem_stiff: np.ndarray = field(repr=False, default=None)
    _gauss: tuple = field(repr=False, default=None)
    _mass_lu: object = field(repr=False, default=None)

    def element_values(self, w: np.ndarray) -> np.ndarray:
        return w[self.conn]

    def weighted_mass_data(self, w: np.ndarray) -> np.ndarray:
        """Per-element matrices of the w-weighted mass: sum_k w_k T_k."""
        return np.tensordot(self.element_values(w), self.third, axes=(1, 0))

    def weighted_mass(self, w: np.ndarray) -> sp.csr_matrix:
        n_e = self.conn.shape[0]
        data = [self.weighted_mass_data(w)]
        for wall in self.walls.values():
            m = wall.edge_conn.shape[1]
            data.append(np.zeros((wall.edge_conn.shape[0], m, m)))
        return self.pattern.assemble(data)

    def weighted_load(self, w: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Vector with entries int w_h v_h phi_i (exact quadrature)."""
        el = np.einsum("eij,ej->ei", self.weighted_mass_data(w),
                       self.element_values(v))
        return np.bincount(self.conn.ravel(), weights=el.ravel(),
                           minlength=self.grid.n_nodes)

    def quad_values(self, w: np.ndarray) -> np.ndarray:
        """Interpolated nodal field at the element Gauss points."""
        _, _, shapes = self._gauss
        return self.element_values(w) @ shapes.T

    def quad_integral(self, values: np.ndarray) -> float:
        """Integrate per-Gauss-point values (n_elem, n_gp) over the mesh."""
        _, wgt, _ = self._gauss
        jac = self.grid.h ** self.grid.dim
        return float(np.sum(values @ wgt) * jac)

    def quad_gradients(self, w: np.ndarray) -> np.ndarray:
        """Gradient of the interpolant at the Gauss points, (n_el, n_gp, dim)."""
        pts, _, _ = self._gauss
        h = self.grid.h
        el = self.element_values(w)
        if self.grid.dim == 1:
            g = (el[:, 1] - el[:, 0]) / h
            return np.repeat(g[:, None], len(pts), axis=1)[:, :, None]
        xi, eta = pts[:, 0], pts[:, 1]
        # tensor node order (0,0),(1,0),(0,1),(1,1)
        dx = np.stack([-(1 - eta), (1 - eta), -eta, eta], axis=1) / h
        dy = np.stack([-(1 - xi), -xi, (1 - xi), xi], axis=1) / h
        return np.stack([el @ dx.T, el @ dy.T], axis=2)

    def project_gradient(self, w: np.ndarray, axis: int = 0) -> np.ndarray:
        """Nodal L2 projection of d(w_h)/d(x_axis)."""
        pts, wgt, shapes = self._gauss
        jac = self.grid.h ** self.grid.dim
        grads = self.quad_gradients(w)[:, :, axis]
        el = np.einsum("eg,g,gi->ei", grads, wgt, shapes) * jac
        load = np.bincount(self.conn.ravel(), weights=el.ravel(),
                           minlength=self.grid.n_nodes)
        if self._mass_lu is None:
            from scipy.sparse.linalg import splu
            self._mass_lu = splu(self.mass.tocsc())
        return self._mass_lu.solve(load)

    def mass_solve(self, rhs: np.ndarray) -> np.ndarray:
        """Apply the inverse consistent mass matrix."""
        if self._mass_lu is None:
            from scipy.sparse.linalg import splu
            self._mass_lu = splu(self.mass.tocsc())
        return self._mass_lu.solve(rhs)


def assemble(grid: Grid) -> DiscreteOperators:
    """Build mass/stiffness/boundary operators for the grid."""
    h = grid.h
    if grid.dim == 1:
        m_el, k_el, third = _p1_matrices(h)
        n_el = grid.elems[0]
        conn = np.stack([np.arange(n_el), np.arange(n_el) + 1], axis=1)
    else:
        m_el, k_el, third = _q1_matrices(h)
        nx, ny = grid.elems
        nx1 = nx + 1
        ex, ey = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
        base = (ey * nx1 + ex).ravel()
        conn = np.stack([base, base + 1, base + nx1, base + nx1 + 1], axis=1)

    def make_wall(side: str) -> WallOps:
        nodes = grid.wall_nodes(side)
        n = len(nodes)
        if grid.dim == 1:
            B = sp.csr_matrix(np.array([[1.0]]))
            edge_conn = np.array([[0]])
            d2 = None
            corner = np.zeros(1, dtype=bool)
        else:
            B = _edge_mass_local(n, h)
            edge_conn = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
            d2 = _d2_local(n, h)
            corner = np.zeros(n, dtype=bool)
            corner[0] = corner[-1] = True
        return WallOps(side=side, nodes=nodes, h=h, B_local=B,
                       edge_conn=edge_conn, layers=_wall_layers(grid, side, 3),
                       d2=d2, corner=corner)

    walls = {s: make_wall(s) for s in grid.absorbing_sides()}
    source_walls = {s: make_wall(s) for s in grid.source_sides()}

    blocks = [conn]
    for wall in walls.values():
        blocks.append(wall.nodes[wall.edge_conn])
    pattern = MatrixPattern(blocks, grid.n_nodes)

    n_el = conn.shape[0]
    elem_mass = np.broadcast_to(m_el, (n_el,) + m_el.shape)
    elem_stiff = np.broadcast_to(k_el, (n_el,) + k_el.shape)

    def const_assemble(E):
        data = [np.broadcast_to(E, (n_el,) + E.shape)]
        for wall in walls.values():
            m = wall.edge_conn.shape[1]
            data.append(np.zeros((wall.edge_conn.shape[0], m, m)))
        return pattern.assemble(data)

    mass = const_assemble(m_el)
    stiffness = const_assemble(k_el)
    boundary_mass = {s: w.B_local for s, w in walls.items()}

    ops = DiscreteOperators(grid=grid, mass=mass, stiffness=stiffness,
                            boundary_mass=boundary_mass, conn=conn,
                            third=third, pattern=pattern, walls=walls,
                            source_walls=source_walls,
                            elem_mass=np.asarray(elem_mass),
                            elem_stiff=np.asarray(elem_stiff))
    ops._gauss = _gauss_points(grid.dim)
    return ops


def boundary_damping_data(ops: DiscreteOperators, coeffs: dict):
    """Per-wall element data realizing sum_edges B_local*diag(c).

    coeffs maps absorbing side -> nodal coefficient vector on that wall;
    the returned list lines up with the pattern's wall blocks.
    """
    out = []
    for side, wall in ops.walls.items():
        c = coeffs[side]
        if ops.grid.dim == 1:
            out.append(c.reshape(1, 1, 1).copy())
            continue
        n_e = wall.edge_conn.shape[0]
        data = np.zeros((n_e, 2, 2))
        Bfull = wall.B_local
        # consistent edge mass times diag(c), split per edge
        e_m = ops.grid.h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
        cl = c[wall.edge_conn]                      # (n_e, 2)
        data = e_m[None, :, :] * cl[:, None, :]
        out.append(data)
    return out


class FactorCache:
    """Direct sparse solves with factor reuse.

    The LU of a reference matrix is kept and reused for nearby matrices via
    defect-correction refinement (exact to rel_tol); the factor is refreshed
    whenever refinement stalls, so results match a fresh factorization to
    solver tolerance while skipping most refactorizations.
    """

    def __init__(self, rel_tol: float = 1e-13, max_refine: int = 60,
                 stall_after: int = 12):
        self.rel_tol = rel_tol
        self.max_refine = max_refine
        self.stall_after = stall_after
        self._lu = None
        self.n_factorizations = 0

    def _refactor(self, A: sp.csr_matrix):
        from scipy.sparse.linalg import splu
        self._lu = splu(A.tocsc())
        self.n_factorizations += 1

    def solve(self, A: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
        if self._lu is None:
            self._refactor(A)
        x = self._lu.solve(b)
        nb = np.linalg.norm(b)
        if nb == 0.0:
            return np.zeros_like(b)
        refreshed = False
        for sweep in range(self.max_refine):
            r = b - A @ x
            if np.linalg.norm(r) <= self.rel_tol * nb:
                return x
            if sweep >= self.stall_after and not refreshed:
                self._refactor(A)
                x = self._lu.solve(b)
                refreshed = True
                continue
            x = x + self._lu.solve(r)
        r = b - A @ x
        if np.linalg.norm(r) <= 100.0 * self.rel_tol * nb:
            return x
        raise RuntimeError("linear solve failed to refine; matrix may be "
                           "singular or extremely ill-conditioned")
