import numpy as np
import pytest

from ibmg import harness as H
from ibmg.grid import GridGeometry, VelocityBC
from ibmg.krylov import GmresConfig, SolverConfig
from ibmg.timestepper import (SchemeParams, SimulationState, UnconvergedSolve,
                              bisect_stability_limit, estimate_alpha_exp, run_simulation, step)

from conftest import circle_mesh

DIRECT = SolverConfig("direct")


def relaxed_state():
    """Circle at rest: zero force, so nothing should move."""
    g = GridGeometry.unit_square(16)
    mesh = circle_mesh(M1=24, M2=1)
    return SimulationState(0.0, mesh, g, VelocityBC.homogeneous())


def test_zero_stiffness_stays_quiescent():
    st = relaxed_state()
    for scheme in ("explicit", "implicit"):
        traj = run_simulation(st, SchemeParams(0.0, 0.1, scheme), 3, DIRECT)
        np.testing.assert_allclose(traj.state.mesh.X, st.mesh.X, atol=1e-12)


def test_implicit_velocity_scales_with_gamma_at_fixed_alpha():
    """The matrix depends on ``alpha = gamma dt`` and the force term on
    ``gamma``, so at fixed alpha the velocity is linear in gamma."""
    problem = H.build_problem("cavity-annulus", 32)
    st = SimulationState(0.0, problem.mesh, problem.geometry, VelocityBC.homogeneous())
    a, _ = step(st, SchemeParams(20.0, 0.05), DIRECT)
    b, _ = step(st, SchemeParams(10.0, 0.1), DIRECT)
    ua, ub = a.flow.to_vector(), b.flow.to_vector()
    assert np.abs(ua).max() > 0
    np.testing.assert_allclose(ua, 2 * ub, atol=1e-9 * np.abs(ua).max())


def test_implicit_and_explicit_agree_for_small_dt():
    g = GridGeometry.unit_square(32)
    problem = H.build_problem("cavity-annulus", 32)
    st = SimulationState(0.0, problem.mesh, g, problem.bc)
    gamma, t_end = 2.0, 0.02
    out = {}
    for scheme in ("explicit", "implicit"):
        for n in (2, 8):
            traj = run_simulation(st, SchemeParams(gamma, t_end / n, scheme), n, DIRECT)
            out[scheme, n] = traj.state.mesh.X
    gap_coarse = np.abs(out["explicit", 2] - out["implicit", 2]).max()
    gap_fine = np.abs(out["explicit", 8] - out["implicit", 8]).max()
    assert gap_fine < 0.5 * gap_coarse


def test_bisection_brackets_alpha_exp():
    problem = H.build_problem("cavity-annulus", 32)
    g, mesh = problem.geometry, problem.mesh
    est = estimate_alpha_exp(g, mesh)
    lo, hi = bisect_stability_limit(g, mesh, 0.5 * est.alpha_exp, 2.0 * est.alpha_exp)
    assert lo <= 1.1 * est.alpha_exp and hi >= 0.9 * est.alpha_exp
    assert abs(0.5 * (lo + hi) / est.alpha_exp - 1) < 0.1


def test_power_and_arnoldi_agree():
    g = GridGeometry.unit_square(16)
    mesh = circle_mesh(M1=24, M2=2)
    a = estimate_alpha_exp(g, mesh)
    p = estimate_alpha_exp(g, mesh, tol=1e-6, max_iter=5000, method="power")
    assert p.alpha_exp == pytest.approx(a.alpha_exp, rel=1e-2)


def test_shear_drift_insensitive_to_stiffness():
    problem = H.build_problem("shear-annulus", 32)
    st = SimulationState(0.0, problem.mesh, problem.geometry, problem.bc)
    solver = SolverConfig("mg-gmres", 8)
    centroid = []
    for gamma in (10.0, 1000.0):
        traj = run_simulation(st, SchemeParams(gamma, 0.05, "implicit"), 4, solver)
        centroid.append(traj.state.mesh.X[..., 0].mean() - st.mesh.X[..., 0].mean())
    assert centroid[0] > 0
    assert abs(centroid[1] / centroid[0] - 1) < 0.1


def test_strict_mode_raises_on_unconverged_solve():
    problem = H.build_problem("cavity-annulus", 32)
    st = SimulationState(0.0, problem.mesh, problem.geometry, problem.bc)
    solver = SolverConfig("mg-gmres", 1, gmres=GmresConfig(1e-10, 2))
    with pytest.raises(UnconvergedSolve):
        step(st, SchemeParams(10.0, 0.1), solver)
    _, info = step(st, SchemeParams(10.0, 0.1), solver, strict=False)
    assert not info.converged and info.iterations == 2


def test_scheme_validation():
    with pytest.raises(ValueError):
        SchemeParams(-1.0, 0.1)
    with pytest.raises(ValueError):
        SchemeParams(1.0, 0.1, "rk4")
