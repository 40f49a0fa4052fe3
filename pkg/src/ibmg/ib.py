"""Lagrangian fiber mesh, cosine delta kernel, spreading/interpolation and the
Eulerian elasticity operator ``S A_f S*``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import GridGeometry, StaggeredVelocityField, u_index, v_index, unpack


class SupportError(ValueError):
    """A Lagrangian node is too close to the domain boundary."""


@dataclass(frozen=True)
class FiberMesh:
    """Node positions ``X[k, l] = (x, y)`` with ``k`` along each fiber and ``l``
    indexing fibers."""

    X: np.ndarray
    ds: float
    periodic_s1: bool = True

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 3 or X.shape[2] != 2:
            raise ValueError(f"node array must be M1 x M2 x 2, got {X.shape}")
        if X.shape[0] < 3 or X.shape[1] < 1:
            raise ValueError(f"need M1 >= 3 and M2 >= 1, got {X.shape[:2]}")
        if not self.ds > 0:
            raise ValueError("Lagrangian spacing must be positive")
        object.__setattr__(self, "X", X)

    @property
    def shape(self) -> tuple[int, int]:
        return self.X.shape[0], self.X.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.X.shape[0] * self.X.shape[1]

    def moved(self, X) -> "FiberMesh":
        return FiberMesh(X, self.ds, self.periodic_s1)


def annulus_mesh(N: int, center=(0.5, 0.5), r: float = 0.25, w: float = 1.0 / 16) -> FiberMesh:
    """Thick annulus of circumferential fibers sized for an ``N``-cell-wide unit grid.

    ``M1 = 19 N / 8`` nodes per fiber, ``M2 = 3 N / 32 + 1`` fibers.
    """
    if (19 * N) % 8 or (3 * N) % 32:
        raise ValueError(f"N = {N} does not give integer node counts")
    M1 = 19 * N // 8
    M2 = 3 * N // 32 + 1
    ds = 2 * np.pi * r / M1
    s1 = ds * np.arange(M1)
    s2 = w * np.arange(M2) / (M2 - 1) if M2 > 1 else np.zeros(1)
    S1, S2 = np.meshgrid(s1, s2, indexing="ij")
    X = np.stack([center[0] + (r + S2) * np.cos(S1 / r),
                  center[1] + (r + S2) * np.sin(S1 / r)], axis=-1)
    return FiberMesh(X, ds, True)


def delta_1d(r, h):
    """Cosine kernel ``(1 + cos(pi r / 2h)) / 4h`` supported on ``|r| < 2h``."""
    r = np.asarray(r, dtype=float)
    return np.where(np.abs(r) < 2 * h, (1.0 + np.cos(np.pi * r / (2 * h))) / (4 * h), 0.0)


def force_matrix(mesh: FiberMesh) -> sp.csr_matrix:
    """Three-point second difference along ``s1`` acting on ``[X, Y]`` node vectors.

    Node ``(k, l)`` is number ``k * M2 + l`` and components are stacked
    (all x first, then all y). Open fibers get zero force at their endpoints.
    """
    M1, M2 = mesh.shape
    n = M1 * M2
    k, l = np.meshgrid(np.arange(M1), np.arange(M2), indexing="ij")
    k, l = k.ravel(), l.ravel()
    node = k * M2 + l
    if mesh.periodic_s1:
        rows = np.concatenate([node, node, node])
        cols = np.concatenate([((k - 1) % M1) * M2 + l, node, ((k + 1) % M1) * M2 + l])
        vals = np.concatenate([np.ones(n), -2 * np.ones(n), np.ones(n)])
    else:
        mid = (k > 0) & (k < M1 - 1)
        km, lm, nm = k[mid], l[mid], node[mid]
        rows = np.concatenate([nm, nm, nm])
        cols = np.concatenate([(km - 1) * M2 + lm, nm, (km + 1) * M2 + lm])
        vals = np.concatenate([np.ones(nm.size), -2 * np.ones(nm.size), np.ones(nm.size)])
    A = sp.csr_matrix((vals / mesh.ds ** 2, (rows, cols)), shape=(n, n))
    return sp.block_diag([A, A], format="csr")


def fiber_force(mesh: FiberMesh, gamma: float) -> np.ndarray:
    """Force density ``gamma (X[k-1] - 2 X[k] + X[k+1]) / ds^2`` per fiber."""
    X = mesh.X
    F = np.zeros_like(X)
    if mesh.periodic_s1:
        F[:] = np.roll(X, 1, axis=0) - 2 * X + np.roll(X, -1, axis=0)
    else:
        F[1:-1] = X[:-2] - 2 * X[1:-1] + X[2:]
    return gamma * F / mesh.ds ** 2


def _check_support(mesh: FiberMesh, g: GridGeometry):
    x0, x1, y0, y1 = g.extent
    pad = 2 * g.h
    X, Y = mesh.X[..., 0], mesh.X[..., 1]
    bad = (X < x0 + pad) | (X > x1 - pad) | (Y < y0 + pad) | (Y > y1 - pad)
    if bad.any():
        k, l = np.argwhere(bad)[0]
        raise SupportError(
            f"node (k={k}, l={l}) at {tuple(mesh.X[k, l])} has kernel support crossing the boundary")


def _kernel_weights(pos, g: GridGeometry, offset_x: float, offset_y: float, index):
    """Columns and values of ``delta_h(x_face - X)`` for every node (4x4 footprint)."""
    x0, y0 = g.origin
    h = g.h
    # face (i, j) sits at (x0 + (i + offset_x) h, y0 + (j + offset_y) h)
    fx = (pos[:, 0] - x0) / h - offset_x
    fy = (pos[:, 1] - y0) / h - offset_y
    i0 = np.floor(fx).astype(np.int64) - 1
    j0 = np.floor(fy).astype(np.int64) - 1
    di = np.arange(4)
    ii = i0[:, None, None] + di[None, None, :]
    jj = j0[:, None, None] + di[None, :, None]
    wx = delta_1d((ii - fx[:, None, None]) * h, h)
    wy = delta_1d((jj - fy[:, None, None]) * h, h)
    cols = index[jj, ii]
    vals = wx * wy
    return cols.reshape(len(pos), -1), vals.reshape(len(pos), -1)


def kernel_matrix(mesh: FiberMesh, g: GridGeometry) -> sp.csr_matrix:
    """``W[node_component, dof] = delta_h(x_dof - X_node)`` over interior velocity DOFs.

    Shape ``(2 n_nodes, n_vel)``; interpolation is ``h^2 W`` and spreading is
    ``ds^2 W^T``.
    """
    _check_support(mesh, g)
    pos = mesh.X.reshape(-1, 2)
    n = len(pos)
    cu, wu = _kernel_weights(pos, g, 0.0, 0.5, u_index(g))
    cv, wv = _kernel_weights(pos, g, 0.5, 0.0, v_index(g))
    rows = np.concatenate([np.repeat(np.arange(n), cu.shape[1]),
                           n + np.repeat(np.arange(n), cv.shape[1])])
    cols = np.concatenate([cu.ravel(), cv.ravel()])
    vals = np.concatenate([wu.ravel(), wv.ravel()])
    keep = vals != 0.0
    if np.any(cols[keep] < 0):
        raise SupportError("kernel support reaches a boundary-normal face")
    W = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(2 * n, g.n_vel))
    W.sum_duplicates()
    return W


def _to_node_vector(F: np.ndarray) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    return np.concatenate([F[..., 0].ravel(), F[..., 1].ravel()])


def _from_node_vector(x: np.ndarray, shape) -> np.ndarray:
    n = shape[0] * shape[1]
    return np.stack([x[:n].reshape(shape), x[n:].reshape(shape)], axis=-1)


def spread(mesh: FiberMesh, F: np.ndarray, g: GridGeometry) -> StaggeredVelocityField:
    """Eulerian force density ``f = sum_k F_k delta_h(x - X_k) ds^2`` on the faces."""
    W = kernel_matrix(mesh, g)
    f = mesh.ds ** 2 * (W.T @ _to_node_vector(F))
    return unpack(f, g)[0]


def interpolate(mesh: FiberMesh, vel: StaggeredVelocityField) -> np.ndarray:
    """Node velocities ``U_k = sum_faces u delta_h(x - X_k) h^2`` as an ``M1 x M2 x 2`` array."""
    g = vel.geometry
    W = kernel_matrix(mesh, g)
    U = g.h ** 2 * (W @ vel.interior_vector())
    return _from_node_vector(U, mesh.shape)


@dataclass(frozen=True)
class ElasticityOperator:
    """``matrix`` is ``S A_f S*`` on interior velocity DOFs; it enters the
    momentum block scaled by ``alpha``."""

    matrix: sp.csr_matrix
    alpha: float = 1.0

    @property
    def scaled(self) -> sp.csr_matrix:
        return (self.alpha * self.matrix).tocsr()

    def with_alpha(self, alpha: float) -> "ElasticityOperator":
        return ElasticityOperator(self.matrix, alpha)


def assemble_elasticity(mesh: FiberMesh, g: GridGeometry, alpha: float = 1.0) -> ElasticityOperator:
    W = kernel_matrix(mesh, g)
    Af = force_matrix(mesh)
    M = (mesh.ds ** 2 * g.h ** 2) * (W.T @ (Af @ W))
    M = sp.csr_matrix(M)
    M.sum_duplicates()
    M.eliminate_zeros()
    return ElasticityOperator(M, alpha)


def apply_elasticity(mesh: FiberMesh, vel: StaggeredVelocityField) -> StaggeredVelocityField:
    """Matrix-free ``S A_f S* u``: interpolate, difference along fibers, spread."""
    U = interpolate(mesh, vel)
    return spread(mesh, fiber_force(mesh.moved(U), 1.0), vel.geometry)
