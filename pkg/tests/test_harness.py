import io

import numpy as np
import pytest

from ibmg import harness as H
from ibmg.cli import main
from ibmg.krylov import SolverConfig, solve
from ibmg.saddle import SaddleState

SMALL = """
[experiment]
problem = cavity-annulus
N = 32
boxes = 1, 8
nu1 = 1
nu2 = 1
solvers = mg, mg-gmres
alpha = 0, 50
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_config_parsing_and_roundtrip():
    cfg = H.parse_config(SMALL)
    assert cfg.grids == (32,) and cfg.boxes == (1, 8)
    assert cfg.sweeps == ((1, 1),) and cfg.solvers == ("mg", "mg-gmres")
    assert cfg.stiffness_kind == "alpha" and cfg.stiffness_values == (0.0, 50.0)
    cfg2 = H.parse_config("[experiment]\ngrids = 32, 64\nsweeps = 1/0, 2/2\nrel_stiffness = 100\ndt = 0.025\n")
    assert cfg2.sweeps == ((1, 0), (2, 2))
    for c in (cfg, cfg2):
        assert H.parse_config(H.format_config(c)) == c


@pytest.mark.parametrize("text", [
    "[experiment]\nalpha = 1\ngamma = 2\n",
    "[experiment]\nproblem = tank\n",
    "[experiment]\nN = 48\n",
    "[experiment]\nsolvers = cg\n",
    "[experiment]\ncolour = red\n",
    "[other]\nN = 32\n",
])
def test_config_errors(text):
    with pytest.raises(ValueError):
        H.parse_config(text)


def test_problem_examples():
    p = H.build_problem("cavity-annulus", 32)
    assert p.mesh.shape == (76, 4)
    np.testing.assert_allclose(p.mesh.X[0, 0], (0.75, 0.5))
    assert H.build_problem("cavity-annulus", 64).mesh.shape == (152, 7)
    s = H.build_problem("shear-annulus", 32).geometry
    assert (s.nx, s.ny, s.h) == (64, 32, 1 / 32)


def test_mesh_text_roundtrip():
    mesh = H.build_problem("cavity-annulus", 32).mesh
    text = H.fiber_mesh_text(mesh)
    assert text.splitlines()[1] == "0 0 0.75 0.5"
    back = H.read_fiber_mesh(io.StringIO(text))
    np.testing.assert_array_equal(back.X, mesh.X)
    assert back.ds == mesh.ds and back.periodic_s1 == mesh.periodic_s1


def test_field_snapshot_roundtrip():
    p = H.build_problem("cavity-annulus", 32)
    system = H.static_system(p, 10.0)
    res = solve(system, SolverConfig("direct"))
    state = SaddleState.from_vector(res.x, p.geometry, p.bc)
    buf = io.StringIO()
    H.write_field_snapshot(state, buf)
    data = H.read_field_snapshot(io.StringIO(buf.getvalue()))
    assert len(data["u"]) == state.vel.u.size and len(data["p"]) == 32 * 32
    j, i = 5, 7
    assert data["u"][i, j] == state.vel.u[j, i]
    assert data["p"][i, j] == state.p.p[j, i]


def test_static_sweep_cli_writes_csv(tmp_path):
    out = tmp_path / "out"
    assert main(["static-sweep", "--config", write(tmp_path, SMALL), "--out", str(out)]) == 0
    rows = H.read_csv(out / "runs.csv")
    assert (out / "runs.csv").read_text().splitlines()[0].split(",") == list(H.CSV_COLUMNS)
    assert len(rows) == 2 * 2 * 2
    assert all(r["converged"] == "1" for r in rows)
    assert H.parse_config((out / "config.ini").read_text()) == H.parse_config(SMALL)
    assert len((out / "residuals.txt").read_text().splitlines()) == 8


def test_cli_exit_codes(tmp_path):
    capped = SMALL.replace("alpha = 0, 50", "alpha = 50") + "max_iter = 2\n"
    assert main(["static-sweep", "--config", write(tmp_path, capped), "--out", str(tmp_path / "a")]) == 2
    assert main(["static-sweep", "--config", write(tmp_path, "[experiment]\nN = 48\n", "bad.ini"),
                 "--out", str(tmp_path / "b")]) == 1
    assert main(["static-sweep", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path / "c")]) == 1


def test_sweep_is_deterministic_across_threads(tmp_path):
    cfg = H.parse_config(SMALL)
    a = H.run_static_sweep(cfg, threads=1)
    b = H.run_static_sweep(cfg, threads=2)
    assert [(r.box, r.solver, r.alpha, r.iterations) for r in a] == \
           [(r.box, r.solver, r.alpha, r.iterations) for r in b]
    np.testing.assert_array_equal([r.final_residual for r in a], [r.final_residual for r in b])


def test_dump_operator_matches_assembled_matrix(tmp_path):
    text = "[experiment]\nN = 32\nalpha = 10\noperator = system\n"
    out = tmp_path / "dump"
    assert main(["dump-operator", "--config", write(tmp_path, text), "--out", str(out)]) == 0
    M = H.read_dense(out / "system_N32_alpha10.mtx")
    A = H.static_system(H.build_problem("cavity-annulus", 32), 10.0).matrix.toarray()
    np.testing.assert_allclose(M, A, atol=1e-12 * np.abs(A).max())


def test_work_estimate_and_optimal_sweeps():
    cfg = H.parse_config("[experiment]\nN = 32\nboxes = 4\nsweeps = 1/0, 1/1, 2/2\nsolvers = mg\nalpha = 0\n")
    recs = H.run_static_sweep(cfg)
    for r in recs:
        assert H.work_estimate(r) == (r.nu1 + r.nu2 + 1) * r.iterations
    best = H.optimal_sweeps(recs)
    (key, pair), = best.items()
    assert pair == min(((r.nu1, r.nu2) for r in recs),
                       key=lambda nu: next(H.work_estimate(r) for r in recs if (r.nu1, r.nu2) == nu))
