import numpy as np
import pytest

from ibmg import grid
from ibmg.grid import (CellField, GridGeometry, StaggeredVelocityField, VelocityBC,
                       lid_driven_cavity_bc, shear_bc)


def dense_stokes_oracle(nx, ny, h):
    """Loop-coded MAC Stokes matrix with reflection ghosts for tangential walls."""
    uid, vid, pid = {}, {}, {}
    for j in range(ny):
        for i in range(1, nx):
            uid[j, i] = len(uid)
    nu = len(uid)
    for j in range(1, ny):
        for i in range(nx):
            vid[j, i] = nu + len(vid)
    nvel = nu + len(vid)
    for j in range(ny):
        for i in range(nx):
            pid[j, i] = nvel + len(pid)
    n = nvel + len(pid)
    A = np.zeros((n, n))
    c = 1.0 / h ** 2
    for (j, i), r in uid.items():
        A[r, r] -= 4 * c
        for jj, ii in ((j, i - 1), (j, i + 1)):
            if (jj, ii) in uid:
                A[r, uid[jj, ii]] += c
        for jj in (j - 1, j + 1):
            if 0 <= jj < ny:
                A[r, uid[jj, i]] += c
            else:
                A[r, r] -= c  # ghost = -interior
        A[r, pid[j, i]] -= 1 / h
        A[r, pid[j, i - 1]] += 1 / h
    for (j, i), r in vid.items():
        A[r, r] -= 4 * c
        for jj, ii in ((j - 1, i), (j + 1, i)):
            if (jj, ii) in vid:
                A[r, vid[jj, ii]] += c
        for ii in (i - 1, i + 1):
            if 0 <= ii < nx:
                A[r, vid[j, ii]] += c
            else:
                A[r, r] -= c
        A[r, pid[j, i]] -= 1 / h
        A[r, pid[j - 1, i]] += 1 / h
    for (j, i), r in pid.items():
        for key, s in (((j, i + 1), 1), ((j, i), -1)):
            if key in uid:
                A[r, uid[key]] += s / h
        for key, s in (((j + 1, i), 1), ((j, i), -1)):
            if key in vid:
                A[r, vid[key]] += s / h
    return A


@pytest.mark.parametrize("nx,ny", [(4, 4), (8, 8), (16, 16), (8, 4), (16, 8)])
def test_stokes_matrix_matches_loop_oracle(nx, ny):
    g = GridGeometry(nx, ny, 1.0 / ny)
    A = grid.stokes_matrix(g).toarray()
    np.testing.assert_allclose(A, dense_stokes_oracle(nx, ny, g.h), atol=1e-9, rtol=0)


def test_divergence_is_minus_gradient_transpose(g16):
    D = grid.divergence_matrix(g16).toarray()
    G = grid.gradient_matrix(g16).toarray()
    np.testing.assert_array_equal(D, -G.T)


def test_laplacian_symmetric_negative_definite(g8):
    L = grid.laplacian_matrix(g8).toarray()
    np.testing.assert_allclose(L, L.T)
    assert np.linalg.eigvalsh(L).max() < 0


def test_gradient_divergence_adjointness(g16):
    assert grid.adjointness_check(g16, trials=5) < 1e-10


def test_stencils_agree_with_matrices(g16, rng):
    w = rng.standard_normal(g16.n_dof)
    vel, p = grid.unpack(w, g16, VelocityBC.homogeneous())
    hom = VelocityBC.homogeneous()
    mom = grid.apply_laplacian(vel, hom) - grid.apply_gradient(p)
    div = grid.apply_divergence(vel)
    Aw = grid.stokes_matrix(g16) @ w
    np.testing.assert_allclose(mom.interior_vector(), Aw[:g16.n_vel], atol=1e-9)
    np.testing.assert_allclose(div.p.ravel(), Aw[g16.n_vel:], atol=1e-9)


def test_laplacian_exact_on_quadratics_away_from_walls():
    g = GridGeometry.unit_square(16)
    vel = StaggeredVelocityField.from_functions(g, lambda x, y: x ** 2 + 3 * y ** 2, lambda x, y: x * y)
    lap = grid.apply_laplacian(vel, VelocityBC.homogeneous())
    # interior rows away from the tangential walls see only exact samples
    np.testing.assert_allclose(lap.u[1:-1, 1:-1], 8.0, atol=1e-9)
    np.testing.assert_allclose(lap.v[1:-1, 1:-1], 0.0, atol=1e-9)


def test_boundary_lift_matches_inhomogeneous_apply(rng):
    g = GridGeometry(8, 4, 0.25)
    bc = shear_bc()
    w = rng.standard_normal(g.n_dof)
    vel, p = grid.unpack(w, g, bc)
    mom = grid.apply_laplacian(vel, bc) - grid.apply_gradient(p)
    div = grid.apply_divergence(vel)
    lift_m, lift_d = grid.boundary_lift(g, bc)
    Aw = grid.stokes_matrix(g) @ w
    np.testing.assert_allclose(Aw[:g.n_vel] + lift_m, mom.interior_vector(), atol=1e-9)
    np.testing.assert_allclose(Aw[g.n_vel:] + lift_d, div.p.ravel(), atol=1e-9)


def test_cavity_lid_values():
    g = GridGeometry.unit_square(8)
    bottom, top = lid_driven_cavity_bc().u_tangential(g)
    x = np.arange(9) / 8
    np.testing.assert_allclose(top, 0.5 * (1 - np.cos(2 * np.pi * x)), atol=1e-15)
    np.testing.assert_array_equal(bottom, 0.0)


def test_shear_flow_is_discrete_solution():
    """``(u, v) = (y, 0)`` with constant pressure solves the discrete problem exactly."""
    g = GridGeometry(16, 8, 1 / 8)
    bc = shear_bc()
    vel = StaggeredVelocityField.from_functions(g, lambda x, y: y, lambda x, y: 0 * x)
    w = grid.pack(vel, CellField.zeros(g))
    lift_m, lift_d = grid.boundary_lift(g, bc)
    r = grid.stokes_matrix(g) @ w + np.concatenate([lift_m, lift_d])
    assert np.abs(r).max() < 1e-9


def test_pack_unpack_roundtrip(g8, rng):
    w = rng.standard_normal(g8.n_dof)
    vel, p = grid.unpack(w, g8)
    np.testing.assert_array_equal(grid.pack(vel, p), w)


def test_geometry_validation():
    with pytest.raises(ValueError):
        GridGeometry(1, 4, 0.25)
    with pytest.raises(ValueError):
        GridGeometry(4, 4, 0.0)
    with pytest.raises(ValueError):
        GridGeometry(6, 4, 0.25).coarsen().coarsen()
    with pytest.raises(ValueError):
        grid.unpack(np.zeros(5), GridGeometry.unit_square(4))


def test_dof_counts():
    g = GridGeometry(8, 4, 0.25)
    assert (g.n_u, g.n_v, g.n_p) == (28, 24, 32)
    assert g.extent == (0.0, 2.0, 0.0, 1.0)
