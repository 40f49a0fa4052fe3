"""Grid transfers, hybrid coarse operators and the V-cycle."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .grid import CellField, GridGeometry, StaggeredVelocityField, VelocityBC, u_index, v_index
from .ib import ElasticityOperator
from .saddle import SaddleSystem, project_pressure
from .smoothers import BoxSmoother


# ---------------------------------------------------------------------------
# field-level transfers


def _require_even(g: GridGeometry):
    if g.nx % 2 or g.ny % 2:
        raise ValueError(f"grid {g.nx}x{g.ny} has odd dimensions")


def restrict_pressure(fine: CellField) -> CellField:
    g = fine.geometry
    _require_even(g)
    p = fine.p
    c = 0.25 * (p[0::2, 0::2] + p[0::2, 1::2] + p[1::2, 0::2] + p[1::2, 1::2])
    return CellField(c, g.coarsen())


def prolong_pressure(coarse: CellField, fine_geometry: GridGeometry | None = None) -> CellField:
    g = coarse.geometry
    fg = fine_geometry or GridGeometry(2 * g.nx, 2 * g.ny, g.h / 2, g.origin)
    return CellField(np.kron(coarse.p, np.ones((2, 2))), fg)


def restrict_velocity(fine: StaggeredVelocityField, bc: VelocityBC | None = None) -> StaggeredVelocityField:
    """``(1/8)[1 2 1; 1 2 1]`` for u (full weighting in x, pairs in y), transposed for v.

    Boundary-normal coarse faces take ``bc`` sampled on the coarse grid, or the
    mean of the two coincident fine boundary faces when no ``bc`` is given.
    """
    g = fine.geometry
    _require_even(g)
    cg = g.coarsen()
    u, v = fine.u, fine.v
    uc = np.zeros((cg.ny, cg.nx + 1))
    pair = u[0::2] + u[1::2]
    uc[:, 1:-1] = (pair[:, 1:-2:2] + 2 * pair[:, 2:-1:2] + pair[:, 3::2]) / 8
    vc = np.zeros((cg.ny + 1, cg.nx))
    pair = v[:, 0::2] + v[:, 1::2]
    vc[1:-1, :] = (pair[1:-2:2] + 2 * pair[2:-1:2] + pair[3::2]) / 8
    if bc is None:
        uc[:, 0] = 0.5 * (u[0::2, 0] + u[1::2, 0])
        uc[:, -1] = 0.5 * (u[0::2, -1] + u[1::2, -1])
        vc[0] = 0.5 * (v[0, 0::2] + v[0, 1::2])
        vc[-1] = 0.5 * (v[-1, 0::2] + v[-1, 1::2])
        return StaggeredVelocityField(uc, vc, cg)
    return StaggeredVelocityField(uc, vc, cg).with_boundary(bc)


def _bilinear_rows(c: np.ndarray, low_wall: np.ndarray, high_wall: np.ndarray) -> np.ndarray:
    """Interpolate cell-centred rows (axis 0) to the doubled grid, reflecting
    through the wall values beyond the first and last rows."""
    ghost_lo = 2 * low_wall - c[0]
    ghost_hi = 2 * high_wall - c[-1]
    ext = np.concatenate([ghost_lo[None], c, ghost_hi[None]])
    out = np.empty((2 * c.shape[0],) + c.shape[1:])
    out[0::2] = 0.75 * ext[1:-1] + 0.25 * ext[:-2]
    out[1::2] = 0.75 * ext[1:-1] + 0.25 * ext[2:]
    return out


def _linear_nodes(c: np.ndarray) -> np.ndarray:
    """Interpolate node-centred columns (axis 1) to the doubled grid."""
    out = np.empty((c.shape[0], 2 * (c.shape[1] - 1) + 1))
    out[:, 0::2] = c
    out[:, 1::2] = 0.5 * (c[:, :-1] + c[:, 1:])
    return out


def prolong_velocity(coarse: StaggeredVelocityField, bc: VelocityBC | None = None) -> StaggeredVelocityField:
    """Componentwise bilinear interpolation; tangential ghosts reflect through
    the wall values of ``bc`` (homogeneous when omitted)."""
    cg = coarse.geometry
    fg = GridGeometry(2 * cg.nx, 2 * cg.ny, cg.h / 2, cg.origin)
    bc = bc or VelocityBC.homogeneous()
    ub, ut = bc.u_tangential(cg)
    u = _linear_nodes(_bilinear_rows(coarse.u, ub, ut))
    vl, vr = bc.v_tangential(cg)
    v = _linear_nodes(_bilinear_rows(coarse.v.T, vl, vr)).T
    return StaggeredVelocityField(u, v, fg)


# ---------------------------------------------------------------------------
# the same transfers as sparse matrices on interior DOF vectors


def _csr(rows, cols, vals, shape):
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    keep = (rows >= 0) & (cols >= 0)
    m = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=shape)
    m.sum_duplicates()
    return m


def velocity_restriction(fg: GridGeometry) -> sp.csr_matrix:
    _require_even(fg)
    cg = fg.coarsen()
    fu, fv = u_index(fg), v_index(fg)
    cu, cv = u_index(cg), v_index(cg)
    rows, cols, vals = [], [], []
    jc, ic = np.meshgrid(np.arange(cg.ny), np.arange(1, cg.nx), indexing="ij")
    for dj in (0, 1):
        for di, wt in ((-1, 1.0), (0, 2.0), (1, 1.0)):
            rows.append(cu[jc, ic].ravel())
            cols.append(fu[2 * jc + dj, 2 * ic + di].ravel())
            vals.append(np.full(jc.size, wt / 8))
    jc, ic = np.meshgrid(np.arange(1, cg.ny), np.arange(cg.nx), indexing="ij")
    for di in (0, 1):
        for dj, wt in ((-1, 1.0), (0, 2.0), (1, 1.0)):
            rows.append(cv[jc, ic].ravel())
            cols.append(fv[2 * jc + dj, 2 * ic + di].ravel())
            vals.append(np.full(jc.size, wt / 8))
    return _csr(rows, cols, vals, (cg.n_vel, fg.n_vel))


def _axis_weights(fine_idx, n_coarse_rows, node_centred):
    """(coarse index, weight) pairs for the 1D interpolation along one axis.

    Node-centred axes interpolate linearly between coincident nodes;
    cell-centred axes use 3/4-1/4 weights with reflection (weight -1) beyond
    the walls, giving ``ghost = -interior`` for homogeneous data.
    """
    if node_centred:
        even = fine_idx % 2 == 0
        a = np.where(even, fine_idx // 2, (fine_idx - 1) // 2)
        b = np.where(even, -1, (fine_idx + 1) // 2)
        return [(a, np.where(even, 1.0, 0.5)), (b, np.where(even, 0.0, 0.5))]
    c = fine_idx // 2
    nb = np.where(fine_idx % 2 == 0, c - 1, c + 1)
    outside = (nb < 0) | (nb >= n_coarse_rows)
    return [(c, np.where(outside, 0.5, 0.75)), (np.where(outside, -1, nb), np.where(outside, 0.0, 0.25))]


def velocity_prolongation(fg: GridGeometry) -> sp.csr_matrix:
    _require_even(fg)
    cg = fg.coarsen()
    fu, fv = u_index(fg), v_index(fg)
    cu, cv = u_index(cg), v_index(cg)
    rows, cols, vals = [], [], []

    j, i = np.meshgrid(np.arange(fg.ny), np.arange(1, fg.nx), indexing="ij")
    for ci, wi in _axis_weights(i, cg.nx + 1, True):
        for cj, wj in _axis_weights(j, cg.ny, False):
            ok = (ci >= 0) & (cj >= 0)
            rows.append(fu[j, i][ok]); cols.append(cu[cj[ok], ci[ok]]); vals.append((wi * wj)[ok])

    j, i = np.meshgrid(np.arange(1, fg.ny), np.arange(fg.nx), indexing="ij")
    for cj, wj in _axis_weights(j, cg.ny + 1, True):
        for ci, wi in _axis_weights(i, cg.nx, False):
            ok = (ci >= 0) & (cj >= 0)
            rows.append(fv[j, i][ok]); cols.append(cv[cj[ok], ci[ok]]); vals.append((wi * wj)[ok])
    m = _csr(rows, cols, vals, (fg.n_vel, cg.n_vel))
    m.eliminate_zeros()
    return m


def pressure_restriction(fg: GridGeometry) -> sp.csr_matrix:
    _require_even(fg)
    cg = fg.coarsen()
    jc, ic = np.meshgrid(np.arange(cg.ny), np.arange(cg.nx), indexing="ij")
    rows, cols, vals = [], [], []
    for dj in (0, 1):
        for di in (0, 1):
            rows.append((jc * cg.nx + ic).ravel())
            cols.append(((2 * jc + dj) * fg.nx + 2 * ic + di).ravel())
            vals.append(np.full(jc.size, 0.25))
    return _csr(rows, cols, vals, (cg.n_p, fg.n_p))


def pressure_prolongation(fg: GridGeometry) -> sp.csr_matrix:
    _require_even(fg)
    return (4.0 * pressure_restriction(fg).T).tocsr()


def restriction_matrix(fg: GridGeometry) -> sp.csr_matrix:
    return sp.block_diag([velocity_restriction(fg), pressure_restriction(fg)], format="csr")


def prolongation_matrix(fg: GridGeometry) -> sp.csr_matrix:
    return sp.block_diag([velocity_prolongation(fg), pressure_prolongation(fg)], format="csr")


def galerkin_coarsen_elasticity(fine: ElasticityOperator, fg: GridGeometry) -> ElasticityOperator:
    """``R E P`` over velocity DOFs as a sparse triple product."""
    R = velocity_restriction(fg)
    P = velocity_prolongation(fg)
    Mc = (R @ fine.matrix @ P).tocsr()
    Mc.sum_duplicates()
    Mc.eliminate_zeros()
    return ElasticityOperator(Mc, fine.alpha)


# ---------------------------------------------------------------------------
# hierarchy and cycle


@dataclass(frozen=True)
class CyclePolicy:
    nu1: int = 1
    nu2: int = 1
    coarsest_size: int = 4

    def __post_init__(self):
        if self.nu1 < 0 or self.nu2 < 0 or self.nu1 + self.nu2 < 1:
            raise ValueError("need at least one smoothing sweep per level")


class CoarseSolver:
    """Dense LU of the saddle matrix bordered by the mean-pressure constraint."""

    def __init__(self, system: SaddleSystem):
        g = system.geometry
        A = system.matrix.toarray()
        n = A.shape[0]
        B = np.zeros((n + 1, n + 1))
        B[:n, :n] = A
        B[g.n_vel:n, n] = 1.0
        B[n, g.n_vel:n] = 1.0
        self.n = n
        self.lu = sla.lu_factor(B)
        if np.min(np.abs(np.diag(self.lu[0]))) < 1e-13 * np.max(np.abs(B)):
            raise np.linalg.LinAlgError("coarse saddle matrix is singular beyond the pressure constant")

    def __call__(self, b: np.ndarray) -> np.ndarray:
        return sla.lu_solve(self.lu, np.append(b, 0.0))[:self.n]


def coarsest_solve(system: SaddleSystem, b: np.ndarray) -> np.ndarray:
    return CoarseSolver(system)(b)


@dataclass
class Level:
    system: SaddleSystem
    smoother: BoxSmoother | None = None
    coarse_solver: CoarseSolver | None = None
    R: sp.csr_matrix | None = None
    P: sp.csr_matrix | None = None

    @property
    def geometry(self) -> GridGeometry:
        return self.system.geometry


@dataclass
class GridHierarchy:
    levels: list[Level]
    policy: CyclePolicy
    box_size: int

    @property
    def fine(self) -> SaddleSystem:
        return self.levels[0].system


def build_hierarchy(fine_system: SaddleSystem, policy: CyclePolicy = CyclePolicy(),
                    box_size: int = 1) -> GridHierarchy:
    """Rediscretised Stokes on every level plus Galerkin-coarsened elasticity."""
    g = fine_system.geometry
    geoms = [g]
    while min(geoms[-1].nx, geoms[-1].ny) > policy.coarsest_size:
        cur = geoms[-1]
        if cur.nx % 2 or cur.ny % 2:
            raise ValueError(f"grid {g.nx}x{g.ny} cannot be coarsened to {policy.coarsest_size} cells")
        geoms.append(cur.coarsen())

    levels = []
    elast = fine_system.elasticity
    for l, geom in enumerate(geoms):
        if l == 0:
            system = SaddleSystem(geom, VelocityBC.homogeneous(), elast)
        else:
            if elast is not None:
                elast = galerkin_coarsen_elasticity(elast, geoms[l - 1])
            system = SaddleSystem(geom, VelocityBC.homogeneous(), elast)
        level = Level(system)
        if l == len(geoms) - 1:
            level.coarse_solver = CoarseSolver(system)
        else:
            level.smoother = BoxSmoother(system, box_size)
            level.R = restriction_matrix(geom)
            level.P = prolongation_matrix(geom)
        levels.append(level)
    return GridHierarchy(levels, policy, box_size)


def _cycle(hier: GridHierarchy, l: int, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    level = hier.levels[l]
    if level.coarse_solver is not None:
        return level.coarse_solver(b)
    pol = hier.policy
    level.smoother(w, b, pol.nu1)
    r = b - level.system.matrix @ w
    rc = level.R @ r
    ec = _cycle(hier, l + 1, np.zeros_like(rc), rc)
    w += level.P @ ec
    level.smoother(w, b, pol.nu2)
    return w


def v_cycle(hier: GridHierarchy, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """One V(nu1, nu2) cycle; returns a new state with zero-mean pressure."""
    w = np.array(w, dtype=float, copy=True)
    w = _cycle(hier, 0, w, np.asarray(b, dtype=float))
    return project_pressure(w, hier.levels[0].geometry)
