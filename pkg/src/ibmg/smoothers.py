"""Multiplicative box (Vanka) relaxation over n x n cell blocks.

Each box collects every velocity face of its cells (shared edge faces are
owned by both neighbouring boxes) and its cell pressures. A sweep visits the
boxes lexicographically, x fastest, and solves the operator restricted to the
box for a residual correction that is applied immediately.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.lib.stride_tricks import sliding_window_view

from .grid import GridGeometry, p_index, u_index, v_index
from .saddle import SaddleSystem

# local systems larger than this are factored sparsely instead of inverted densely
DENSE_LIMIT = 400


@dataclass(frozen=True)
class BoxPartition:
    geometry: GridGeometry
    n: int
    nbx: int
    nby: int
    ptr: np.ndarray
    dofs: np.ndarray
    n_p: np.ndarray
    wall_class: np.ndarray

    @property
    def n_boxes(self) -> int:
        return len(self.ptr) - 1

    def box_dofs(self, k: int) -> np.ndarray:
        return self.dofs[self.ptr[k]:self.ptr[k + 1]]

    def box_cells(self, k: int) -> tuple[slice, slice]:
        g = self.geometry
        per_row = g.nx // self.nbx
        by, bx = divmod(k, per_row)
        return (slice(by * self.nby, (by + 1) * self.nby),
                slice(bx * self.nbx, (bx + 1) * self.nbx))


def build_partition(g: GridGeometry, n: int) -> BoxPartition:
    """Lexicographic ``n x n`` boxes; ``n`` is clipped to the grid on coarse levels."""
    if n < 1:
        raise ValueError("box size must be at least 1")
    nbx, nby = min(n, g.nx), min(n, g.ny)
    if g.nx % nbx or g.ny % nby:
        raise ValueError(f"box size {n} does not divide the {g.nx}x{g.ny} grid")
    NBx, NBy = g.nx // nbx, g.ny // nby

    U = sliding_window_view(u_index(g), (nby, nbx + 1))[::nby, ::nbx]
    V = sliding_window_view(v_index(g), (nby + 1, nbx))[::nby, ::nbx]
    P = sliding_window_view(p_index(g), (nby, nbx))[::nby, ::nbx]
    nb = NBx * NBy
    table = np.concatenate([U.reshape(nb, -1), V.reshape(nb, -1), P.reshape(nb, -1)], axis=1)
    keep = table >= 0
    counts = keep.sum(axis=1)
    ptr = np.zeros(nb + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    dofs = table[keep].astype(np.int64)

    by, bx = np.divmod(np.arange(nb), NBx)
    wall_class = ((bx == 0).astype(np.int64) | ((bx == NBx - 1) << 1)
                  | ((by == 0) << 2) | ((by == NBy - 1) << 3))
    return BoxPartition(g, n, nbx, nby, ptr, dofs, np.full(nb, nbx * nby), wall_class)


@numba.njit(cache=True)
def _extract_dense(indptr, indices, data, ptr, dofs, boxes, out_ptr, out, pos):
    """Dense principal submatrices ``A[dofs_k, dofs_k]`` for the listed boxes."""
    for t in range(boxes.shape[0]):
        k = boxes[t]
        s = ptr[k]
        m = ptr[k + 1] - s
        for a in range(m):
            pos[dofs[s + a]] = a
        off = out_ptr[t]
        for a in range(m * m):
            out[off + a] = 0.0
        for a in range(m):
            row = dofs[s + a]
            for q in range(indptr[row], indptr[row + 1]):
                c = pos[indices[q]]
                if c >= 0:
                    out[off + a * m + c] += data[q]
        for a in range(m):
            pos[dofs[s + a]] = -1


@numba.njit(cache=True)
def _sweep_dense(indptr, indices, data, b, w, ptr, dofs, box_mat, mat_ptr, mats):
    nb = ptr.shape[0] - 1
    maxm = 0
    for k in range(nb):
        maxm = max(maxm, ptr[k + 1] - ptr[k])
    r = np.empty(maxm)
    for k in range(nb):
        s = ptr[k]
        m = ptr[k + 1] - s
        for a in range(m):
            row = dofs[s + a]
            acc = b[row]
            for q in range(indptr[row], indptr[row + 1]):
                acc -= data[q] * w[indices[q]]
            r[a] = acc
        off = mat_ptr[box_mat[k]]
        for a in range(m):
            acc = 0.0
            base = off + a * m
            for c in range(m):
                acc += mats[base + c] * r[c]
            w[dofs[s + a]] += acc


def _bordered_inverse(M: np.ndarray, n_p: int) -> np.ndarray:
    """Generalized inverse of a local matrix whose pressure block spans the
    whole domain: solutions are normalised to zero mean pressure."""
    m = M.shape[0]
    c = np.zeros(m)
    c[m - n_p:] = 1.0
    B = np.zeros((m + 1, m + 1))
    B[:m, :m] = M
    B[:m, m] = c
    B[m, :m] = c
    return np.linalg.inv(B)[:m, :m]


class LocalSolvers:
    """Factorizations of the box-restricted operators of one system.

    Boxes that see no elasticity coupling share a factorization per wall
    class; boxes touching the structure get their own.
    """

    def __init__(self, partition: BoxPartition, system: SaddleSystem):
        A = system.matrix
        g = partition.geometry
        self.partition = partition
        self.matrix = A
        part = partition
        nb = part.n_boxes

        elastic = np.zeros(g.n_dof, dtype=bool)
        if system.elasticity is not None and system.alpha != 0.0:
            E = system.elasticity.matrix
            elastic[:g.n_vel] = np.diff(E.indptr) > 0
        touched = np.add.reduceat(elastic[part.dofs].astype(np.int64), part.ptr[:-1]) > 0

        box_mat = np.empty(nb, dtype=np.int64)
        reps = []
        class_ids = {}
        for k in np.flatnonzero(~touched):
            key = int(part.wall_class[k])
            if key not in class_ids:
                class_ids[key] = len(reps)
                reps.append(k)
            box_mat[k] = class_ids[key]
        for k in np.flatnonzero(touched):
            box_mat[k] = len(reps)
            reps.append(k)
        reps = np.asarray(reps, dtype=np.int64)
        self.box_mat = box_mat
        self.representatives = reps
        sizes = part.ptr[reps + 1] - part.ptr[reps]
        self.whole_domain = nb == 1
        self.dense = bool(sizes.max() <= DENSE_LIMIT)

        if self.dense:
            mat_ptr = np.zeros(len(reps) + 1, dtype=np.int64)
            np.cumsum(sizes * sizes, out=mat_ptr[1:])
            flat = np.empty(mat_ptr[-1])
            pos = -np.ones(g.n_dof, dtype=np.int64)
            _extract_dense(A.indptr, A.indices.astype(np.int64), A.data, part.ptr, part.dofs,
                           reps, mat_ptr, flat, pos)
            for t, m in enumerate(sizes):
                M = flat[mat_ptr[t]:mat_ptr[t + 1]].reshape(m, m)
                if self.whole_domain:
                    Minv = _bordered_inverse(M, g.n_p)
                else:
                    Minv = np.linalg.inv(M)
                flat[mat_ptr[t]:mat_ptr[t + 1]] = Minv.ravel()
            self.mat_ptr = mat_ptr
            self.mats = flat
        else:
            self._factors = []
            for k in reps:
                d = part.box_dofs(k)
                M = A[d][:, d]
                if self.whole_domain:
                    m = M.shape[0]
                    c = np.zeros((m, 1))
                    c[m - g.n_p:] = 1.0
                    M = sp.bmat([[M, sp.csr_matrix(c)], [sp.csr_matrix(c.T), None]])
                self._factors.append(spla.splu(sp.csc_matrix(M)))
            self._rows = [A[part.box_dofs(k)] for k in range(nb)]

    def local_matrix(self, k: int) -> np.ndarray:
        d = self.partition.box_dofs(k)
        return self.matrix[d][:, d].toarray()

    def solve_box(self, k: int, r: np.ndarray) -> np.ndarray:
        """Correction for box ``k`` given the residual restricted to its rows."""
        t = self.box_mat[k]
        if self.dense:
            m = len(r)
            return self.mats[self.mat_ptr[t]:self.mat_ptr[t + 1]].reshape(m, m) @ r
        if self.whole_domain:
            return self._factors[t].solve(np.append(r, 0.0))[:-1]
        return self._factors[t].solve(r)


def build_local_solvers(partition: BoxPartition, system: SaddleSystem) -> LocalSolvers:
    return LocalSolvers(partition, system)


def sweep(partition: BoxPartition, solvers: LocalSolvers, system: SaddleSystem | None,
          w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """One multiplicative sweep; updates ``w`` in place and returns it."""
    A = solvers.matrix
    if solvers.dense:
        _sweep_dense(A.indptr, A.indices, A.data, b, w, partition.ptr, partition.dofs,
                     solvers.box_mat, solvers.mat_ptr, solvers.mats)
        return w
    for k in range(partition.n_boxes):
        d = partition.box_dofs(k)
        r = b[d] - solvers._rows[k] @ w
        w[d] += solvers.solve_box(k, r)
    return w


class BoxSmoother:
    """Partition plus local factorizations for one grid level."""

    def __init__(self, system: SaddleSystem, n: int):
        self.partition = build_partition(system.geometry, n)
        self.solvers = build_local_solvers(self.partition, system)

    def __call__(self, w: np.ndarray, b: np.ndarray, sweeps: int = 1) -> np.ndarray:
        for _ in range(sweeps):
            sweep(self.partition, self.solvers, None, w, b)
        return w
