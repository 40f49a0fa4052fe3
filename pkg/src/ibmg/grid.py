"""Uniform staggered (MAC) grid, field containers and discrete Stokes operators.

Array layout is row-major ``(j, i)``: ``u`` has shape ``(ny, nx + 1)`` with
``u[j, i]`` living on the vertical face at ``x = x0 + i h``; ``v`` has shape
``(ny + 1, nx)`` with ``v[j, i]`` on the horizontal face at ``y = y0 + j h``;
pressure has shape ``(ny, nx)``.

Solvers work on flat DOF vectors ordered ``[u_interior, v_interior, p]``.
Boundary-normal velocities are Dirichlet data and never appear as unknowns.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class GridGeometry:
    nx: int
    ny: int
    h: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs at least 2x2 cells, got {self.nx}x{self.ny}")
        if not self.h > 0:
            raise ValueError(f"cell width must be positive, got {self.h}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def unit_square(cls, n: int) -> "GridGeometry":
        return cls(n, n, 1.0 / n)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return x0, x0 + self.nx * self.h, y0, y0 + self.ny * self.h

    @property
    def n_u(self) -> int:
        return (self.nx - 1) * self.ny

    @property
    def n_v(self) -> int:
        return self.nx * (self.ny - 1)

    @property
    def n_vel(self) -> int:
        return self.n_u + self.n_v

    @property
    def n_p(self) -> int:
        return self.nx * self.ny

    @property
    def n_dof(self) -> int:
        return self.n_vel + self.n_p

    def coarsen(self) -> "GridGeometry":
        if self.nx % 2 or self.ny % 2:
            raise ValueError(f"cannot coarsen a {self.nx}x{self.ny} grid")
        return GridGeometry(self.nx // 2, self.ny // 2, 2 * self.h, self.origin)

    def u_coords(self):
        x0, y0 = self.origin
        x = x0 + self.h * np.arange(self.nx + 1)
        y = y0 + self.h * (np.arange(self.ny) + 0.5)
        return np.meshgrid(x, y)

    def v_coords(self):
        x0, y0 = self.origin
        x = x0 + self.h * (np.arange(self.nx) + 0.5)
        y = y0 + self.h * np.arange(self.ny + 1)
        return np.meshgrid(x, y)

    def cell_coords(self):
        x0, y0 = self.origin
        x = x0 + self.h * (np.arange(self.nx) + 0.5)
        y = y0 + self.h * (np.arange(self.ny) + 0.5)
        return np.meshgrid(x, y)


def _check_shape(name, arr, shape):
    if arr.shape != shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")


@dataclass(frozen=True)
class StaggeredVelocityField:
    u: np.ndarray
    v: np.ndarray
    geometry: GridGeometry

    def __post_init__(self):
        g = self.geometry
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        _check_shape("u", self.u, (g.ny, g.nx + 1))
        _check_shape("v", self.v, (g.ny + 1, g.nx))

    @classmethod
    def zeros(cls, geometry: GridGeometry) -> "StaggeredVelocityField":
        return cls(np.zeros((geometry.ny, geometry.nx + 1)),
                   np.zeros((geometry.ny + 1, geometry.nx)), geometry)

    @classmethod
    def from_functions(cls, geometry, ufun, vfun) -> "StaggeredVelocityField":
        """Sample ``ufun(x, y)`` and ``vfun(x, y)`` at the face centers."""
        xu, yu = geometry.u_coords()
        xv, yv = geometry.v_coords()
        u = np.broadcast_to(ufun(xu, yu), xu.shape).astype(float)
        v = np.broadcast_to(vfun(xv, yv), xv.shape).astype(float)
        return cls(u, v, geometry)

    def interior_vector(self) -> np.ndarray:
        return np.concatenate([self.u[:, 1:-1].ravel(), self.v[1:-1, :].ravel()])

    def with_boundary(self, bc: "VelocityBC") -> "StaggeredVelocityField":
        """Copy with the boundary-normal faces overwritten by Dirichlet data."""
        u, v = self.u.copy(), self.v.copy()
        left, right = bc.u_normal(self.geometry)
        bottom, top = bc.v_normal(self.geometry)
        u[:, 0], u[:, -1] = left, right
        v[0, :], v[-1, :] = bottom, top
        return StaggeredVelocityField(u, v, self.geometry)

    def __add__(self, other):
        return StaggeredVelocityField(self.u + other.u, self.v + other.v, self.geometry)

    def __sub__(self, other):
        return StaggeredVelocityField(self.u - other.u, self.v - other.v, self.geometry)

    def __rmul__(self, a):
        return StaggeredVelocityField(a * self.u, a * self.v, self.geometry)


@dataclass(frozen=True)
class CellField:
    p: np.ndarray
    geometry: GridGeometry

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        _check_shape("p", self.p, (self.geometry.ny, self.geometry.nx))

    @classmethod
    def zeros(cls, geometry: GridGeometry) -> "CellField":
        return cls(np.zeros((geometry.ny, geometry.nx)), geometry)

    @classmethod
    def from_function(cls, geometry, fun) -> "CellField":
        x, y = geometry.cell_coords()
        return cls(np.broadcast_to(fun(x, y), x.shape).astype(float), geometry)


def _zero(x, y):
    return np.zeros_like(x)


@dataclass(frozen=True)
class VelocityBC:
    """Dirichlet velocity data given as functions of position on the walls.

    Normal components are sampled at the boundary face centers; tangential
    components are sampled on the wall at the abscissa (or ordinate) of the
    adjacent interior faces.
    """

    u: Callable = _zero
    v: Callable = _zero
    name: str = "homogeneous"

    @classmethod
    def homogeneous(cls) -> "VelocityBC":
        return cls()

    @property
    def is_homogeneous(self) -> bool:
        return self.u is _zero and self.v is _zero

    def u_normal(self, g: GridGeometry):
        x0, x1, _, _ = g.extent
        _, y = g.u_coords()
        y = y[:, 0]
        return (np.broadcast_to(self.u(np.full_like(y, x0), y), y.shape).astype(float),
                np.broadcast_to(self.u(np.full_like(y, x1), y), y.shape).astype(float))

    def v_normal(self, g: GridGeometry):
        _, _, y0, y1 = g.extent
        x, _ = g.v_coords()
        x = x[0]
        return (np.broadcast_to(self.v(x, np.full_like(x, y0)), x.shape).astype(float),
                np.broadcast_to(self.v(x, np.full_like(x, y1)), x.shape).astype(float))

    def u_tangential(self, g: GridGeometry):
        """Wall values of ``u`` on the bottom and top walls, one per u-face column."""
        _, _, y0, y1 = g.extent
        x, _ = g.u_coords()
        x = x[0]
        return (np.broadcast_to(self.u(x, np.full_like(x, y0)), x.shape).astype(float),
                np.broadcast_to(self.u(x, np.full_like(x, y1)), x.shape).astype(float))

    def v_tangential(self, g: GridGeometry):
        """Wall values of ``v`` on the left and right walls, one per v-face row."""
        x0, x1, _, _ = g.extent
        _, y = g.v_coords()
        y = y[:, 0]
        return (np.broadcast_to(self.v(np.full_like(y, x0), y), y.shape).astype(float),
                np.broadcast_to(self.v(np.full_like(y, x1), y), y.shape).astype(float))


def lid_driven_cavity_bc() -> VelocityBC:
    """Zero velocity on every wall except ``u = (1 - cos 2 pi x) / 2`` on the top."""
    def u(x, y):
        return np.where(np.isclose(y, 1.0), 0.5 * (1.0 - np.cos(2 * np.pi * x)), 0.0)
    return VelocityBC(u, _zero, "cavity")


def shear_bc() -> VelocityBC:
    """Dirichlet data of the background shear flow ``(u, v) = (y, 0)``."""
    def u(x, y):
        return np.asarray(y, dtype=float) + 0.0 * x
    return VelocityBC(u, _zero, "shear")


# ---------------------------------------------------------------------------
# stencil operators on full fields


def apply_laplacian(vel: StaggeredVelocityField, bc: VelocityBC) -> StaggeredVelocityField:
    """Five-point Laplacian of each component at the interior faces.

    Tangential ghosts use linear reflection through the wall value. Rows of
    the boundary-normal faces are returned as zero.
    """
    g = vel.geometry
    h2 = g.h * g.h
    u, v = vel.u, vel.v

    ub, ut = bc.u_tangential(g)
    ug = np.empty((g.ny + 2, g.nx + 1))
    ug[1:-1] = u
    ug[0] = 2.0 * ub - u[0]
    ug[-1] = 2.0 * ut - u[-1]
    lu = np.zeros_like(u)
    lu[:, 1:-1] = (ug[1:-1, :-2] + ug[1:-1, 2:] + ug[:-2, 1:-1] + ug[2:, 1:-1]
                   - 4.0 * ug[1:-1, 1:-1]) / h2

    vl, vr = bc.v_tangential(g)
    vg = np.empty((g.ny + 1, g.nx + 2))
    vg[:, 1:-1] = v
    vg[:, 0] = 2.0 * vl - v[:, 0]
    vg[:, -1] = 2.0 * vr - v[:, -1]
    lv = np.zeros_like(v)
    lv[1:-1, :] = (vg[1:-1, :-2] + vg[1:-1, 2:] + vg[:-2, 1:-1] + vg[2:, 1:-1]
                   - 4.0 * vg[1:-1, 1:-1]) / h2
    return StaggeredVelocityField(lu, lv, g)


def apply_gradient(p: CellField) -> StaggeredVelocityField:
    g = p.geometry
    gu = np.zeros((g.ny, g.nx + 1))
    gv = np.zeros((g.ny + 1, g.nx))
    gu[:, 1:-1] = (p.p[:, 1:] - p.p[:, :-1]) / g.h
    gv[1:-1, :] = (p.p[1:, :] - p.p[:-1, :]) / g.h
    return StaggeredVelocityField(gu, gv, g)


def apply_divergence(vel: StaggeredVelocityField) -> CellField:
    g = vel.geometry
    d = (vel.u[:, 1:] - vel.u[:, :-1] + vel.v[1:, :] - vel.v[:-1, :]) / g.h
    return CellField(d, g)


def _require_same_geometry(a, b):
    if a.geometry != b.geometry:
        raise ValueError(f"geometry mismatch: {a.geometry} vs {b.geometry}")


def adjointness_check(geometry: GridGeometry, trials: int = 10, seed: int = 0) -> float:
    """Largest ``|<grad p, u>_faces + <p, div u>_cells|`` over random pairs.

    Velocities are random on interior faces and zero on the boundary, so the
    discrete integration-by-parts identity holds exactly up to round-off.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        p = CellField(rng.standard_normal((geometry.ny, geometry.nx)), geometry)
        vel = StaggeredVelocityField.zeros(geometry)
        vel.u[:, 1:-1] = rng.standard_normal((geometry.ny, geometry.nx - 1))
        vel.v[1:-1, :] = rng.standard_normal((geometry.ny - 1, geometry.nx))
        gp = apply_gradient(p)
        lhs = np.sum(gp.u * vel.u) + np.sum(gp.v * vel.v)
        rhs = np.sum(p.p * apply_divergence(vel).p)
        worst = max(worst, abs(lhs + rhs))
    return worst


# ---------------------------------------------------------------------------
# DOF vectors and assembled (homogeneous-BC) operators


def u_index(g: GridGeometry) -> np.ndarray:
    """Map ``(j, i)`` of the full u array to DOF number, ``-1`` on boundary faces."""
    idx = -np.ones((g.ny, g.nx + 1), dtype=np.int64)
    idx[:, 1:-1] = np.arange(g.n_u).reshape(g.ny, g.nx - 1)
    return idx


def v_index(g: GridGeometry) -> np.ndarray:
    idx = -np.ones((g.ny + 1, g.nx), dtype=np.int64)
    idx[1:-1, :] = g.n_u + np.arange(g.n_v).reshape(g.ny - 1, g.nx)
    return idx


def p_index(g: GridGeometry) -> np.ndarray:
    return g.n_vel + np.arange(g.n_p).reshape(g.ny, g.nx)


def pack(vel: StaggeredVelocityField, p: CellField | None = None) -> np.ndarray:
    parts = [vel.interior_vector()]
    if p is not None:
        parts.append(p.p.ravel())
    return np.concatenate(parts)


def unpack(w: np.ndarray, g: GridGeometry, bc: VelocityBC | None = None):
    """Split a DOF vector into a velocity field and (if present) a pressure field."""
    w = np.asarray(w, dtype=float)
    if w.shape[0] not in (g.n_vel, g.n_dof):
        raise ValueError(f"vector of length {w.shape[0]} does not fit grid {g.nx}x{g.ny}")
    vel = StaggeredVelocityField.zeros(g)
    vel.u[:, 1:-1] = w[:g.n_u].reshape(g.ny, g.nx - 1)
    vel.v[1:-1, :] = w[g.n_u:g.n_vel].reshape(g.ny - 1, g.nx)
    if bc is not None:
        vel = vel.with_boundary(bc)
    if w.shape[0] == g.n_vel:
        return vel, None
    return vel, CellField(w[g.n_vel:].reshape(g.ny, g.nx), g)


def _coo(rows, cols, vals, shape):
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    keep = (rows >= 0) & (cols >= 0)
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=shape)


def laplacian_matrix(g: GridGeometry) -> sp.csr_matrix:
    """Homogeneous-BC velocity Laplacian on interior faces (``n_vel x n_vel``)."""
    h2 = g.h * g.h
    rows, cols, vals = [], [], []

    ui = u_index(g)
    interior = ui[:, 1:-1]
    diag = np.full(interior.shape, -4.0)
    diag[0] -= 1.0
    diag[-1] -= 1.0
    rows.append(interior.ravel()); cols.append(interior.ravel()); vals.append(diag.ravel() / h2)
    for nb in (ui[:, :-2], ui[:, 2:]):
        rows.append(interior.ravel()); cols.append(nb.ravel())
        vals.append(np.full(nb.size, 1.0 / h2))
    rows.append(interior[1:].ravel()); cols.append(interior[:-1].ravel())
    vals.append(np.full(interior[1:].size, 1.0 / h2))
    rows.append(interior[:-1].ravel()); cols.append(interior[1:].ravel())
    vals.append(np.full(interior[1:].size, 1.0 / h2))

    vi = v_index(g)
    interior = vi[1:-1, :]
    diag = np.full(interior.shape, -4.0)
    diag[:, 0] -= 1.0
    diag[:, -1] -= 1.0
    rows.append(interior.ravel()); cols.append(interior.ravel()); vals.append(diag.ravel() / h2)
    for nb in (vi[:-2, :], vi[2:, :]):
        rows.append(interior.ravel()); cols.append(nb.ravel())
        vals.append(np.full(nb.size, 1.0 / h2))
    rows.append(interior[:, 1:].ravel()); cols.append(interior[:, :-1].ravel())
    vals.append(np.full(interior[:, 1:].size, 1.0 / h2))
    rows.append(interior[:, :-1].ravel()); cols.append(interior[:, 1:].ravel())
    vals.append(np.full(interior[:, 1:].size, 1.0 / h2))

    return _coo(rows, cols, vals, (g.n_vel, g.n_vel))


def gradient_matrix(g: GridGeometry) -> sp.csr_matrix:
    """Cell-to-face gradient onto interior faces (``n_vel x n_p``), columns 0-based."""
    ui = u_index(g)[:, 1:-1]
    vi = v_index(g)[1:-1, :]
    pc = np.arange(g.n_p).reshape(g.ny, g.nx)
    rows = [ui.ravel(), ui.ravel(), vi.ravel(), vi.ravel()]
    cols = [pc[:, 1:].ravel(), pc[:, :-1].ravel(), pc[1:, :].ravel(), pc[:-1, :].ravel()]
    vals = [np.full(ui.size, 1.0 / g.h), np.full(ui.size, -1.0 / g.h),
            np.full(vi.size, 1.0 / g.h), np.full(vi.size, -1.0 / g.h)]
    return _coo(rows, cols, vals, (g.n_vel, g.n_p))


def divergence_matrix(g: GridGeometry) -> sp.csr_matrix:
    """Face-to-cell divergence acting on interior faces; equals ``-gradient^T``."""
    return (-gradient_matrix(g).T).tocsr()


def stokes_matrix(g: GridGeometry, velocity_block: sp.spmatrix | None = None) -> sp.csr_matrix:
    """``[[L + K, -G], [D, 0]]`` with ``K`` an optional extra velocity block."""
    lap = laplacian_matrix(g)
    if velocity_block is not None:
        lap = lap + velocity_block
    grad = gradient_matrix(g)
    return sp.bmat([[lap, -grad], [divergence_matrix(g), None]], format="csr")


def boundary_lift(g: GridGeometry, bc: VelocityBC):
    """Inhomogeneous operator evaluated on the boundary data alone.

    Returns ``(momentum, continuity)`` vectors; moving them to the right-hand
    side leaves the homogeneous-BC system for the interior unknowns.
    """
    vel = StaggeredVelocityField.zeros(g).with_boundary(bc)
    lap = apply_laplacian(vel, bc)
    div = apply_divergence(vel)
    return lap.interior_vector(), div.p.ravel()
