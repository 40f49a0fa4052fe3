"""The coupled velocity-pressure system

    [ L + alpha S A_f S*   -G ] [u]   [-S F + bc]
    [ D                     0 ] [p] = [   bc    ]

on interior DOFs, with inhomogeneous Dirichlet data folded into the
right-hand side.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import grid
from .grid import CellField, GridGeometry, StaggeredVelocityField, VelocityBC
from .ib import ElasticityOperator, FiberMesh, fiber_force, kernel_matrix


@dataclass(frozen=True)
class SaddleState:
    vel: StaggeredVelocityField
    p: CellField

    def __post_init__(self):
        if self.vel.geometry != self.p.geometry:
            raise ValueError("velocity and pressure live on different grids")

    @property
    def geometry(self) -> GridGeometry:
        return self.p.geometry

    def to_vector(self) -> np.ndarray:
        return grid.pack(self.vel, self.p)

    @classmethod
    def from_vector(cls, w, g: GridGeometry, bc: VelocityBC | None = None) -> "SaddleState":
        vel, p = grid.unpack(w, g, bc)
        return cls(vel, p)


@dataclass(frozen=True, eq=False)
class SaddleSystem:
    geometry: GridGeometry
    bc: VelocityBC = field(default_factory=VelocityBC.homogeneous)
    elasticity: ElasticityOperator | None = None
    rhs: np.ndarray | None = None

    def __post_init__(self):
        if self.elasticity is not None and self.elasticity.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.rhs is not None and self.rhs.shape != (self.geometry.n_dof,):
            raise ValueError("right-hand side does not match the grid")

    @property
    def alpha(self) -> float:
        return 0.0 if self.elasticity is None else self.elasticity.alpha

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        extra = None
        if self.elasticity is not None and self.alpha != 0.0:
            extra = self.elasticity.scaled
        return grid.stokes_matrix(self.geometry, extra)

    @property
    def b(self) -> np.ndarray:
        return np.zeros(self.geometry.n_dof) if self.rhs is None else self.rhs

    def apply(self, w: np.ndarray) -> np.ndarray:
        if w.shape != (self.geometry.n_dof,):
            raise ValueError(f"state of length {w.shape} does not match the grid")
        return self.matrix @ w

    def residual(self, w: np.ndarray, b: np.ndarray | None = None):
        r = (self.b if b is None else b) - self.apply(w)
        return r, float(np.linalg.norm(r))

    def with_rhs(self, rhs: np.ndarray) -> "SaddleSystem":
        return SaddleSystem(self.geometry, self.bc, self.elasticity, rhs)


def apply_matrix_free(state: SaddleState, alpha: float = 0.0, mesh: FiberMesh | None = None) -> SaddleState:
    """Homogeneous-BC system applied through stencils rather than the matrix."""
    from .ib import apply_elasticity

    g = state.geometry
    hom = VelocityBC.homogeneous()
    vel = StaggeredVelocityField(state.vel.u.copy(), state.vel.v.copy(), g).with_boundary(hom)
    mom = grid.apply_laplacian(vel, hom) - grid.apply_gradient(state.p)
    if alpha and mesh is not None:
        mom = mom + alpha * apply_elasticity(mesh, vel)
    mom.u[:, [0, -1]] = 0.0
    mom.v[[0, -1], :] = 0.0
    return SaddleState(mom, grid.apply_divergence(vel))


def build_rhs(g: GridGeometry, bc: VelocityBC, mesh: FiberMesh | None = None,
              gamma: float = 0.0) -> np.ndarray:
    """Right-hand side ``[-S F(X) - lift_mom, -lift_div]``.

    ``F = gamma A_f X`` is the fiber force of the current configuration.
    """
    lift_mom, lift_div = grid.boundary_lift(g, bc)
    mom = -lift_mom
    if mesh is not None and gamma != 0.0:
        W = kernel_matrix(mesh, g)
        F = fiber_force(mesh, gamma)
        Fv = np.concatenate([F[..., 0].ravel(), F[..., 1].ravel()])
        mom = mom - mesh.ds ** 2 * (W.T @ Fv)
    return np.concatenate([mom, -lift_div])


def project_pressure(w: np.ndarray, g: GridGeometry) -> np.ndarray:
    """Remove the mean of the pressure block in place and return ``w``."""
    w[g.n_vel:] -= w[g.n_vel:].mean()
    return w
