"""Right-preconditioned GMRES, the stationary multigrid solver, and an Arnoldi
probe of the multigrid iteration matrix."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .multigrid import CyclePolicy, GridHierarchy, build_hierarchy, v_cycle
from .saddle import SaddleSystem, project_pressure

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GmresConfig:
    rel_tol: float = 1e-6
    max_iter: int = 100

    def __post_init__(self):
        if not 0 < self.rel_tol < 1:
            raise ValueError("rel_tol must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass
class SolveResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residuals: list[float] = field(default_factory=list)
    diverged: bool = False

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0


def gmres(A: Callable, b: np.ndarray, M: Callable | None = None, config: GmresConfig = GmresConfig(),
          x0: np.ndarray | None = None) -> SolveResult:
    """Full (unrestarted) GMRES minimising ``||b - A M^{-1} y||``.

    ``A`` and ``M`` are callables; ``M(v)`` applies the preconditioner inverse.
    ``residuals`` holds relative residual norms, starting with 1.
    """
    M = M or (lambda v: v)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    ref = np.linalg.norm(b) if x0 is None else beta
    if beta == 0.0:
        return SolveResult(x, 0, True, [0.0])

    m = config.max_iter
    V = np.zeros((m + 1, n))
    Z = np.zeros((m, n))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = r / beta
    history = [beta / ref]

    def update(k):
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k])
        return x + y @ Z[:k]

    k = 0
    converged = False
    while k < m:
        Z[k] = M(V[k])
        w = A(Z[k])
        norm0 = np.linalg.norm(w)
        for i in range(k + 1):
            H[i, k] = V[i] @ w
            w -= H[i, k] * V[i]
        if np.linalg.norm(w) < 0.7 * norm0:
            for i in range(k + 1):
                c = V[i] @ w
                H[i, k] += c
                w -= c * V[i]
        H[k + 1, k] = np.linalg.norm(w)
        breakdown = H[k + 1, k] <= 1e-14 * norm0
        if not breakdown:
            V[k + 1] = w / H[k + 1, k]
        for i in range(k):
            t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
            H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
            H[i, k] = t
        d = np.hypot(H[k, k], H[k + 1, k])
        cs[k], sn[k] = H[k, k] / d, H[k + 1, k] / d
        H[k, k] = d
        H[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        k += 1
        history.append(abs(g[k]) / ref)
        if history[-1] <= config.rel_tol or breakdown:
            xk = update(k)
            true = np.linalg.norm(b - A(xk)) / ref
            if true <= config.rel_tol or breakdown:
                history[-1] = true
                return SolveResult(xk, k, bool(true <= config.rel_tol or breakdown), history)
    xk = update(k)
    history[-1] = np.linalg.norm(b - A(xk)) / ref
    return SolveResult(xk, k, bool(history[-1] <= config.rel_tol), history)


def gmres_solve(hier: GridHierarchy, b: np.ndarray, config: GmresConfig = GmresConfig(),
                precondition: bool = True) -> SolveResult:
    """MG-GMRES: one V-cycle from a zero guess is the right preconditioner."""
    A = hier.fine.matrix
    g = hier.levels[0].geometry
    zero = np.zeros_like(b)
    M = (lambda v: v_cycle(hier, zero, v)) if precondition else None
    res = gmres(lambda x: A @ x, np.asarray(b, dtype=float), M, config)
    project_pressure(res.x, g)
    return res


def mg_solve(hier: GridHierarchy, b: np.ndarray, config: GmresConfig = GmresConfig(),
             x0: np.ndarray | None = None, growth_limit: int = 5,
             blowup: float = 1e2) -> SolveResult:
    """Stationary V-cycle iteration with divergence detection.

    Divergence is declared after ``growth_limit`` consecutive cycles that
    increase the residual, or once the relative residual exceeds ``blowup``
    (oscillatory growth need not increase the residual every cycle).
    """
    A = hier.fine.matrix
    b = np.asarray(b, dtype=float)
    w = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    ref = np.linalg.norm(b - A @ w)
    if ref == 0.0:
        return SolveResult(w, 0, True, [0.0])
    history = [1.0]
    growth = 0
    for it in range(1, config.max_iter + 1):
        w = v_cycle(hier, w, b)
        rel = np.linalg.norm(b - A @ w) / ref
        history.append(rel)
        if rel <= config.rel_tol:
            return SolveResult(w, it, True, history)
        growth = growth + 1 if rel > history[-2] else 0
        if growth >= growth_limit or not rel <= blowup:
            log.info("multigrid diverged after %d cycles", it)
            return SolveResult(w, it, False, history, diverged=True)
    return SolveResult(w, config.max_iter, False, history)


@dataclass(frozen=True)
class SpectrumProbe:
    subspace_dim: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.subspace_dim < 2:
            raise ValueError("Arnoldi dimension must be at least 2")


@dataclass
class SpectrumResult:
    ritz_values: np.ndarray
    residual_estimates: np.ndarray

    @property
    def rho(self) -> float:
        return float(np.max(np.abs(self.ritz_values)))


def arnoldi(op: Callable, v0: np.ndarray, m: int, project: Callable | None = None) -> SpectrumResult:
    """Ritz values of ``op`` from an ``m``-step Arnoldi process (MGS, with one
    reorthogonalisation pass), sorted by decreasing modulus."""
    project = project or (lambda v: v)
    n = v0.shape[0]
    V = np.zeros((m + 1, n))
    H = np.zeros((m + 1, m))
    v = project(v0.copy())
    V[0] = v / np.linalg.norm(v)
    k = m
    for j in range(m):
        w = project(op(V[j]))
        for _ in range(2):
            c = V[:j + 1] @ w
            H[:j + 1, j] += c
            w -= c @ V[:j + 1]
        H[j + 1, j] = np.linalg.norm(w)
        if H[j + 1, j] < 1e-13:
            k = j + 1
            break
        V[j + 1] = w / H[j + 1, j]
    theta, Y = np.linalg.eig(H[:k, :k])
    resid = np.abs(H[k, k - 1] * Y[-1, :]) if k < m + 1 else np.zeros(k)
    order = np.argsort(-np.abs(theta))
    return SpectrumResult(theta[order], resid[order])


def iteration_matrix_operator(hier: GridHierarchy) -> Callable:
    """``x -> x - V(0, A x)``: error propagation of one cycle."""
    A = hier.fine.matrix
    zero = np.zeros(A.shape[0])
    return lambda x: x - v_cycle(hier, zero, A @ x)


def iteration_matrix_spectrum(hier: GridHierarchy, probe: SpectrumProbe = SpectrumProbe()) -> SpectrumResult:
    """Dominant Ritz values of the cycle's iteration matrix on the zero-mean
    pressure subspace (the trivial eigenvalue 1 is projected out)."""
    g = hier.levels[0].geometry
    rng = np.random.default_rng(probe.seed)
    v0 = rng.standard_normal(g.n_dof)
    return arnoldi(iteration_matrix_operator(hier), v0, probe.subspace_dim,
                   lambda v: project_pressure(v, g))


@dataclass(frozen=True)
class SolverConfig:
    """How a saddle system is solved: ``mg``, ``mg-gmres`` or ``direct``."""

    kind: str = "mg-gmres"
    box_size: int = 1
    policy: CyclePolicy = CyclePolicy()
    gmres: GmresConfig = GmresConfig()

    def __post_init__(self):
        if self.kind not in ("mg", "mg-gmres", "direct"):
            raise ValueError(f"unknown solver {self.kind!r}")


def direct_solve(system: SaddleSystem, b: np.ndarray | None = None) -> np.ndarray:
    """Sparse LU with the last pressure pinned, then zero-mean projection."""
    A = system.matrix.tolil()
    n = A.shape[0]
    b = np.array(system.b if b is None else b, dtype=float)
    A[n - 1, :] = 0.0
    A[n - 1, n - 1] = 1.0
    b[n - 1] = 0.0
    x = spla.splu(A.tocsc()).solve(b)
    return project_pressure(x, system.geometry)


def solve(system: SaddleSystem, config: SolverConfig = SolverConfig(),
          hierarchy: GridHierarchy | None = None) -> SolveResult:
    b = system.b
    if config.kind == "direct":
        x = direct_solve(system)
        r = np.linalg.norm(b - system.matrix @ x) / max(np.linalg.norm(b), 1e-300)
        return SolveResult(x, 1, True, [1.0, r])
    hier = hierarchy or build_hierarchy(system, config.policy, config.box_size)
    if config.kind == "mg":
        return mg_solve(hier, b, config.gmres)
    return gmres_solve(hier, b, config.gmres)
