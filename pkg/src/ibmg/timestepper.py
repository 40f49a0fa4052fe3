"""Explicit and implicit IB time stepping and the explicit stability limit."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from . import grid
from .grid import GridGeometry, VelocityBC
from .ib import FiberMesh, assemble_elasticity, force_matrix, interpolate, kernel_matrix
from .krylov import SolverConfig, solve
from .saddle import SaddleState, SaddleSystem, build_rhs

log = logging.getLogger(__name__)


class UnconvergedSolve(RuntimeError):
    def __init__(self, msg, iterations):
        super().__init__(msg)
        self.iterations = iterations


@dataclass(frozen=True)
class SchemeParams:
    gamma: float
    dt: float
    scheme: str = "implicit"

    def __post_init__(self):
        if self.gamma < 0 or not self.dt > 0:
            raise ValueError("need gamma >= 0 and dt > 0")
        if self.scheme not in ("explicit", "implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def alpha(self) -> float:
        return self.gamma * self.dt


@dataclass(frozen=True)
class SimulationState:
    t: float
    mesh: FiberMesh
    geometry: GridGeometry
    bc: VelocityBC
    flow: SaddleState | None = None


@dataclass
class StepInfo:
    iterations: int
    converged: bool
    residual: float


def _advance(state: SimulationState, system: SaddleSystem, params: SchemeParams,
             solver: SolverConfig, strict: bool):
    g = state.geometry
    res = solve(system, solver)
    if strict and not res.converged:
        raise UnconvergedSolve(f"flow solve did not converge at t={state.t:.4g}", res.iterations)
    flow = SaddleState.from_vector(res.x, g, state.bc)
    U = interpolate(state.mesh, flow.vel)
    X = state.mesh.X + params.dt * U
    new = SimulationState(state.t + params.dt, state.mesh.moved(X), g, state.bc, flow)
    return new, StepInfo(res.iterations, res.converged, res.final_residual)


def step_explicit(state: SimulationState, params: SchemeParams, solver: SolverConfig,
                  strict: bool = True):
    """Stokes solve with the force of ``X^n`` on the right, then ``X += dt S* u``."""
    g = state.geometry
    rhs = build_rhs(g, state.bc, state.mesh, params.gamma)
    system = SaddleSystem(g, state.bc, None, rhs)
    return _advance(state, system, params, solver, strict)


def step_implicit(state: SimulationState, params: SchemeParams, solver: SolverConfig,
                  strict: bool = True):
    """Solve ``(L + alpha S A_f S*) u - G p = -gamma S A_f X^n`` with every
    Lagrangian operator evaluated at ``X^n``, then ``X += dt S* u``."""
    g = state.geometry
    rhs = build_rhs(g, state.bc, state.mesh, params.gamma)
    elast = assemble_elasticity(state.mesh, g, params.alpha) if params.alpha > 0 else None
    system = SaddleSystem(g, state.bc, elast, rhs)
    return _advance(state, system, params, solver, strict)


def step(state, params, solver, strict=True):
    fn = step_implicit if params.scheme == "implicit" else step_explicit
    return fn(state, params, solver, strict)


@dataclass
class Trajectory:
    state: SimulationState
    steps: list[StepInfo] = field(default_factory=list)
    checkpoints: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def iterations(self) -> list[int]:
        return [s.iterations for s in self.steps]

    @property
    def mean_iterations(self) -> float:
        return float(np.mean(self.iterations)) if self.steps else 0.0

    @property
    def total_iterations(self) -> int:
        return int(np.sum(self.iterations))


def run_simulation(state: SimulationState, params: SchemeParams, n_steps: int,
                   solver: SolverConfig, recorder: Callable | None = None,
                   checkpoint_every: int = 0, strict: bool = True) -> Trajectory:
    """March ``n_steps`` steps, keeping per-step solver statistics.

    ``recorder(step_index, state, info)`` is called after every step.
    """
    traj = Trajectory(state)
    traj.checkpoints[0] = state.mesh.X.copy()
    for n in range(1, n_steps + 1):
        state, info = step(state, params, solver, strict)
        traj.steps.append(info)
        if recorder is not None:
            recorder(n, state, info)
        if checkpoint_every and n % checkpoint_every == 0:
            traj.checkpoints[n] = state.mesh.X.copy()
    traj.state = state
    return traj


# ---------------------------------------------------------------------------
# explicit stability limit


class StokesDirect:
    """Sparse LU of the homogeneous-BC Stokes matrix with one pressure pinned."""

    def __init__(self, g: GridGeometry):
        A = grid.stokes_matrix(g).tolil()
        n = A.shape[0]
        A[n - 1, :] = 0.0
        A[n - 1, n - 1] = 1.0
        self.g = g
        self.lu = spla.splu(A.tocsc())

    def velocity(self, f: np.ndarray) -> np.ndarray:
        """Velocity solving ``L u - G p + f = 0``, ``D u = 0``."""
        rhs = np.zeros(self.g.n_dof)
        rhs[:self.g.n_vel] = -f
        return self.lu.solve(rhs)[:self.g.n_vel]


@dataclass
class AlphaExpEstimate:
    alpha_exp: float
    rho: float
    iterations: int
    history: list[float]


def lagrangian_operator(g: GridGeometry, mesh: FiberMesh, stokes: Callable | None = None):
    """``X -> S* L^{-1} S A_f X`` on stacked node vectors, plus ``A_f``."""
    stokes = stokes or StokesDirect(g).velocity
    W = kernel_matrix(mesh, g)
    Af = force_matrix(mesh)
    sw, iw = mesh.ds ** 2, g.h ** 2

    def apply(x):
        return iw * (W @ stokes(sw * (W.T @ (Af @ x))))
    return apply, Af


def estimate_alpha_exp(g: GridGeometry, mesh: FiberMesh, tol: float = 1e-8, max_iter: int = 1000,
                       stokes: Callable | None = None, seed: int = 0,
                       method: str = "arnoldi") -> AlphaExpEstimate:
    """``2 / rho`` with ``rho`` the spectral radius of ``S* L^{-1} S A_f``.

    ``method="power"`` runs plain power iteration with the Rayleigh quotient
    taken in the ``-A_f`` inner product, in which the operator is
    self-adjoint. The top of the spectrum is tightly clustered (near-degenerate
    Fourier modes of the annulus), so this is slow; the default uses
    implicitly restarted Arnoldi on the same operator instead.
    """
    K, Af = lagrangian_operator(g, mesh, stokes)
    n = Af.shape[0]
    x = np.random.default_rng(seed).standard_normal(n)
    if method == "arnoldi":
        count = [0]

        def matvec(v):
            count[0] += 1
            return K(v)
        op = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
        try:
            ev = spla.eigs(op, k=1, which="LM", tol=tol, v0=x, maxiter=max_iter,
                           return_eigenvectors=False)
        except spla.ArpackNoConvergence as exc:
            raise RuntimeError("Arnoldi eigenvalue estimate did not converge") from exc
        rho = float(abs(ev[0]))
        return AlphaExpEstimate(2.0 / rho, rho, count[0], [float(ev[0].real)])
    if method != "power":
        raise ValueError(f"unknown method {method!r}")

    x /= np.linalg.norm(x)
    history = []
    prev = None
    for it in range(1, max_iter + 1):
        y = K(x)
        Bx = -(Af @ x)
        lam = float(y @ Bx / (x @ Bx))
        history.append(lam)
        if prev is not None and abs(lam - prev) < tol * abs(lam):
            rho = abs(lam)
            return AlphaExpEstimate(2.0 / rho, rho, it, history)
        prev = lam
        x = y / np.linalg.norm(y)
    raise RuntimeError(f"power iteration did not converge in {max_iter} steps")


def explicit_unstable(g: GridGeometry, mesh: FiberMesh, alpha: float, steps: int = 60,
                      stokes: StokesDirect | None = None, perturbation: float = 1e-6,
                      seed: int = 0) -> bool:
    """Run the explicit scheme (quiescent walls, ``dt = 1``, ``gamma = alpha``)
    from a slightly perturbed mesh and report whether the step increments grew.

    Spreading and interpolation are reassembled at every step, so this tests
    the actual scheme rather than its frozen linearisation.
    """
    stokes = stokes or StokesDirect(g)
    rng = np.random.default_rng(seed)
    X = mesh.X + perturbation * g.h * rng.standard_normal(mesh.X.shape)
    first = last = None
    for _ in range(steps):
        K, _ = lagrangian_operator(g, mesh.moved(X), stokes.velocity)
        x = np.concatenate([X[..., 0].ravel(), X[..., 1].ravel()])
        dx = alpha * K(x)
        n = dx.size // 2
        X = X + np.stack([dx[:n], dx[n:]], axis=-1).reshape(X.shape)
        last = np.linalg.norm(dx)
        if first is None:
            first = last
        if not np.isfinite(last) or last > 1e3 * first:
            return True
    return last > first


def bisect_stability_limit(g: GridGeometry, mesh: FiberMesh, lo: float, hi: float,
                           rel_tol: float = 0.02, steps: int = 60) -> tuple[float, float]:
    """Bracket the largest stable ``alpha`` of the explicit scheme; ``lo`` must
    be stable and ``hi`` unstable."""
    stokes = StokesDirect(g)
    if explicit_unstable(g, mesh, lo, steps, stokes) or not explicit_unstable(g, mesh, hi, steps, stokes):
        raise ValueError("initial interval does not bracket the stability limit")
    while hi - lo > rel_tol * lo:
        mid = 0.5 * (lo + hi)
        if explicit_unstable(g, mesh, mid, steps, stokes):
            hi = mid
        else:
            lo = mid
    return lo, hi
