import numpy as np
import pytest

from ibmg import ib
from ibmg.grid import GridGeometry, VelocityBC
from ibmg.saddle import SaddleSystem
from ibmg.smoothers import BoxSmoother, build_partition

from conftest import circle_mesh


def reference_vanka_sweep(A, b, w, g):
    """Cell-by-cell multiplicative Vanka written from scratch: for every cell,
    x fastest, solve for its four faces and its pressure against the current
    residual. Wall faces are not unknowns."""
    A = A.toarray()
    w = w.copy()
    nu = (g.nx - 1) * g.ny
    nv = g.nx * (g.ny - 1)
    for j in range(g.ny):
        for i in range(g.nx):
            d = []
            for ii in (i, i + 1):
                if 0 < ii < g.nx:
                    d.append(j * (g.nx - 1) + ii - 1)
            for jj in (j, j + 1):
                if 0 < jj < g.ny:
                    d.append(nu + (jj - 1) * g.nx + i)
            d.append(nu + nv + j * g.nx + i)
            d = np.array(d)
            r = b[d] - A[d] @ w
            w[d] += np.linalg.solve(A[np.ix_(d, d)], r)
    return w


@pytest.mark.parametrize("alpha", [0.0, 40.0])
def test_single_cell_sweep_matches_reference(alpha, rng):
    g = GridGeometry.unit_square(16)
    elast = ib.assemble_elasticity(circle_mesh(), g, alpha) if alpha else None
    sys_ = SaddleSystem(g, VelocityBC.homogeneous(), elast)
    b = rng.standard_normal(g.n_dof)
    w = rng.standard_normal(g.n_dof)
    ref = reference_vanka_sweep(sys_.matrix, b, w, g)
    got = BoxSmoother(sys_, 1)(w.copy(), b)
    np.testing.assert_allclose(got, ref, atol=1e-10 * np.abs(ref).max())


@pytest.mark.parametrize("n", [1, 2, 4, 8])
def test_partition_covers_every_dof(n):
    g = GridGeometry(16, 8, 1 / 8)
    part = build_partition(g, n)
    assert part.n_boxes == (16 // n) * (8 // n)
    counts = np.bincount(part.dofs, minlength=g.n_dof)
    # every pressure belongs to exactly one box, every face to one or two
    assert np.all(counts[g.n_vel:] == 1)
    assert counts[:g.n_vel].min() >= 1 and counts[:g.n_vel].max() <= 2
    for k in range(part.n_boxes):
        d = part.box_dofs(k)
        assert len(np.unique(d)) == len(d)
        assert np.sum(d >= g.n_vel) == min(n, 8) * min(n, 16)


def test_box_order_is_lexicographic():
    g = GridGeometry.unit_square(8)
    part = build_partition(g, 2)
    rows, cols = part.box_cells(5)
    assert (rows, cols) == (slice(2, 4), slice(2, 4))


def test_whole_domain_box_solves_exactly(rng):
    g = GridGeometry.unit_square(8)
    sys_ = SaddleSystem(g, VelocityBC.homogeneous(), ib.assemble_elasticity(circle_mesh(), g, 10.0))
    x = rng.standard_normal(g.n_dof)
    x[g.n_vel:] -= x[g.n_vel:].mean()
    w = BoxSmoother(sys_, 8)(np.zeros(g.n_dof), sys_.matrix @ x)
    np.testing.assert_allclose(w, x, atol=1e-9)


def test_sweep_reduces_smooth_free_error(rng):
    g = GridGeometry.unit_square(16)
    sys_ = SaddleSystem(g)
    x = rng.standard_normal(g.n_dof)
    b = sys_.matrix @ x
    for n in (1, 2, 4):
        w = BoxSmoother(sys_, n)(np.zeros(g.n_dof), b, sweeps=3)
        assert np.linalg.norm(b - sys_.matrix @ w) < np.linalg.norm(b)


def test_invalid_box_size():
    g = GridGeometry.unit_square(8)
    with pytest.raises(ValueError):
        build_partition(g, 0)
    with pytest.raises(ValueError):
        build_partition(g, 3)
