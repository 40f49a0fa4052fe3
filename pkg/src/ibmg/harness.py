"""Experiment configuration, problem construction, parameter sweeps and the
plain-text output formats used by the command line tools."""
from __future__ import annotations

import configparser
import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import scipy.io

from .grid import GridGeometry, VelocityBC, lid_driven_cavity_bc, shear_bc
from .ib import FiberMesh, annulus_mesh, assemble_elasticity
from .krylov import (GmresConfig, SolverConfig, SpectrumProbe, iteration_matrix_operator,
                     iteration_matrix_spectrum, solve)
from .multigrid import CyclePolicy, build_hierarchy
from .saddle import SaddleState, SaddleSystem, build_rhs
from .timestepper import SchemeParams, SimulationState, estimate_alpha_exp, run_simulation

log = logging.getLogger(__name__)

PROBLEMS = ("cavity-annulus", "shear-annulus")
CSV_COLUMNS = ("problem", "N", "box", "nu1", "nu2", "solver", "alpha", "rel_stiffness",
               "iterations", "converged", "final_residual", "wall_ms")
DENSE_DUMP_LIMIT = 20000


# ---------------------------------------------------------------------------
# configuration


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _sweeps(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in _words(text):
        a, _, b = item.partition("/")
        out.append((int(a), int(b or 0)))
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment; lists expand into a sweep over their product.

    Exactly one of ``gamma``, ``alpha`` and ``rel_stiffness`` is given. For
    static solves ``gamma`` is read as ``alpha`` (unit time step).
    """

    problem: str = "cavity-annulus"
    grids: tuple[int, ...] = (32,)
    boxes: tuple[int, ...] = (1,)
    sweeps: tuple[tuple[int, int], ...] = ((1, 1),)
    solvers: tuple[str, ...] = ("mg-gmres",)
    gamma: tuple[float, ...] = ()
    alpha: tuple[float, ...] = ()
    rel_stiffness: tuple[float, ...] = ()
    dt: float = 1.0 / 40
    steps: int = 40
    explicit_safety: float = 0.9
    rel_tol: float = 1e-6
    max_iter: int = 100
    alpha_exp_tol: float = 1e-8
    subspace_dim: int = 60
    operator: str = "system"
    seed: int = 0

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        given = [k for k in ("gamma", "alpha", "rel_stiffness") if getattr(self, k)]
        if len(given) > 1:
            raise ValueError(f"give only one of gamma, alpha, rel_stiffness (got {', '.join(given)})")
        for n in self.grids:
            if n < 8 or n & (n - 1):
                raise ValueError(f"N must be a power of two >= 8, got {n}")
        for s in self.solvers:
            if s not in ("mg", "mg-gmres"):
                raise ValueError(f"unknown solver {s!r}")
        if any(b < 1 for b in self.boxes):
            raise ValueError("box sizes must be positive")
        if self.operator not in ("system", "iteration", "elasticity"):
            raise ValueError(f"unknown operator {self.operator!r}")

    @property
    def stiffness_kind(self) -> str:
        for k in ("rel_stiffness", "alpha", "gamma"):
            if getattr(self, k):
                return k
        return "alpha"

    @property
    def stiffness_values(self) -> tuple[float, ...]:
        return getattr(self, self.stiffness_kind) or (0.0,)


_PARSERS = {"grids": _ints, "boxes": _ints, "sweeps": _sweeps, "solvers": _words,
            "gamma": _floats, "alpha": _floats, "rel_stiffness": _floats,
            "dt": float, "steps": int, "explicit_safety": float, "rel_tol": float,
            "max_iter": int, "alpha_exp_tol": float, "subspace_dim": int, "seed": int}


def parse_config(text: str, section: str = "experiment") -> ExperimentConfig:
    """Read an INI-style ``[experiment]`` section; lists are comma separated.

    ``N`` is accepted as an alias of ``grids`` and ``nu1``/``nu2`` as a single
    smoothing pair.
    """
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if not cp.has_section(section):
        raise ValueError(f"config has no [{section}] section")
    raw = dict(cp.items(section))
    kw = {}
    if "n" in raw:
        raw.setdefault("grids", raw.pop("n"))
    if "nu1" in raw or "nu2" in raw:
        kw["sweeps"] = ((int(raw.pop("nu1", 1)), int(raw.pop("nu2", 1))),)
    known = {f.name for f in fields(ExperimentConfig)}
    for key, value in raw.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        kw[key] = _PARSERS.get(key, str)(value)
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: ExperimentConfig) -> str:
    """INI text that :func:`parse_config` maps back to ``cfg``."""
    def item(x):
        if isinstance(x, tuple):
            return f"{x[0]}/{x[1]}"
        return repr(x) if isinstance(x, float) else str(x)

    def fmt(v):
        return ", ".join(item(x) for x in v) if isinstance(v, tuple) else item(v)
    lines = ["[experiment]"]
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple) and not v:
            continue
        lines.append(f"{f.name} = {fmt(v)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# problems


@dataclass(frozen=True)
class Problem:
    name: str
    geometry: GridGeometry
    bc: VelocityBC
    mesh: FiberMesh


def build_problem(name: str, N: int) -> Problem:
    """Cavity: unit square with the cosine lid. Shear: ``[0, 2] x [0, 1]`` with
    ``u = y, v = 0`` on every wall. Both carry the annulus centred at (0.5, 0.5)."""
    if name == "cavity-annulus":
        g, bc = GridGeometry.unit_square(N), lid_driven_cavity_bc()
    elif name == "shear-annulus":
        g, bc = GridGeometry(2 * N, N, 1.0 / N), shear_bc()
    else:
        raise ValueError(f"unknown problem {name!r}")
    return Problem(name, g, bc, annulus_mesh(N))


def static_system(problem: Problem, alpha: float) -> SaddleSystem:
    """Solve for the velocity given the structure at rest in its initial
    configuration; the right-hand side is ``-S A_f X`` plus boundary data."""
    g, bc, mesh = problem.geometry, problem.bc, problem.mesh
    elast = assemble_elasticity(mesh, g, alpha) if alpha > 0 else None
    return SaddleSystem(g, bc, elast, build_rhs(g, bc, mesh, 1.0))


_ALPHA_EXP_CACHE: dict = {}


def alpha_exp_for(problem: Problem, tol: float = 1e-8) -> float:
    key = (problem.name, problem.geometry.nx, problem.geometry.ny, tol)
    if key not in _ALPHA_EXP_CACHE:
        _ALPHA_EXP_CACHE[key] = estimate_alpha_exp(problem.geometry, problem.mesh, tol).alpha_exp
    return _ALPHA_EXP_CACHE[key]


def resolve_alpha(cfg: ExperimentConfig, problem: Problem, value: float, dt: float = 1.0):
    """``(alpha, relative stiffness)`` for one configured stiffness value."""
    a_exp = alpha_exp_for(problem, cfg.alpha_exp_tol)
    kind = cfg.stiffness_kind
    if kind == "rel_stiffness":
        alpha = value * a_exp
    elif kind == "gamma":
        alpha = value * dt
    else:
        alpha = value
    return alpha, alpha / a_exp


# ---------------------------------------------------------------------------
# records


@dataclass
class RunRecord:
    problem: str
    N: int
    box: int
    nu1: int
    nu2: int
    solver: str
    alpha: float
    rel_stiffness: float
    iterations: int
    converged: bool
    final_residual: float
    wall_ms: float
    residuals: list[float] = field(default_factory=list, repr=False)
    diverged: bool = False
    extra: dict = field(default_factory=dict, repr=False)

    def row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


def write_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([f"{v:.6g}" if isinstance(v, float) else int(v) if isinstance(v, (bool, np.bool_)) else v
                        for v in r.row()])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def all_converged(records) -> bool:
    return all(r.converged for r in records)


def _map(fn, tasks, threads: int):
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# static sweeps


def _static_cell(task) -> list[RunRecord]:
    cfg, N, box, (nu1, nu2), value = task
    problem = build_problem(cfg.problem, N)
    alpha, rel = resolve_alpha(cfg, problem, value)
    system = static_system(problem, alpha)
    policy = CyclePolicy(nu1, nu2)
    t0 = time.perf_counter()
    hier = build_hierarchy(system, policy, box)
    setup = time.perf_counter() - t0
    out = []
    for solver in cfg.solvers:
        sc = SolverConfig(solver, box, policy, GmresConfig(cfg.rel_tol, cfg.max_iter))
        t = time.perf_counter()
        res = solve(system, sc, hier)
        wall = 1e3 * (time.perf_counter() - t + setup)
        out.append(RunRecord(cfg.problem, N, box, nu1, nu2, solver, alpha, rel, res.iterations,
                             bool(res.converged), res.final_residual, wall, list(res.residuals),
                             res.diverged, {"value": value}))
    return out


def run_static_sweep(cfg: ExperimentConfig, threads: int = 1) -> list[RunRecord]:
    """Iterations to reduce the residual by ``rel_tol`` from a zero guess for
    every (grid, box, sweep pair, stiffness, solver) combination."""
    tasks = [(cfg, N, box, nu, value) for N in cfg.grids for box in cfg.boxes
             for nu in cfg.sweeps for value in cfg.stiffness_values]
    return [r for cell in _map(_static_cell, tasks, threads) for r in cell]


@dataclass
class RefinementVerdict:
    value: float
    box: int
    counts: dict[int, int]
    converged: bool

    @property
    def spread(self) -> int:
        return max(self.counts.values()) - min(self.counts.values())

    def grid_independent(self, band: int = 3) -> bool:
        """All counts lie within ``+-band`` of a common value."""
        return self.converged and self.spread <= 2 * band


def run_refinement_study(cfg: ExperimentConfig, threads: int = 1):
    """MG-GMRES counts at fixed stiffness across grids; returns records and a
    verdict per (stiffness, box)."""
    cfg = replace(cfg, solvers=("mg-gmres",))
    records = run_static_sweep(cfg, threads)
    verdicts = []
    for value in cfg.stiffness_values:
        for box in cfg.boxes:
            sel = [r for r in records if r.extra["value"] == value and r.box == box]
            verdicts.append(RefinementVerdict(value, box, {r.N: r.iterations for r in sel},
                                              all(r.converged for r in sel)))
    return records, verdicts


def work_estimate(record: RunRecord) -> int:
    """Smoothing work measure ``iterations x (nu1 + nu2 + 1)``."""
    return record.iterations * (record.nu1 + record.nu2 + 1)


def optimal_sweeps(records) -> dict[tuple[int, float], tuple[int, int]]:
    """Lowest-work smoothing pair per (box, relative stiffness) among converged runs."""
    best = {}
    for r in records:
        if not r.converged:
            continue
        key = (r.box, round(r.rel_stiffness, 6))
        if key not in best or work_estimate(r) < work_estimate(best[key]):
            best[key] = r
    return {k: (r.nu1, r.nu2) for k, r in best.items()}


# ---------------------------------------------------------------------------
# time-dependent efficiency study


@dataclass
class EfficiencyRecord:
    rel_stiffness: float
    box: int
    gamma: float
    implicit_total: int
    implicit_mean: float
    explicit_mean: float
    explicit_dt: float
    explicit_total: float

    @property
    def efficiency(self) -> float:
        return self.explicit_total / self.implicit_total


def _efficiency_cell(task):
    cfg, N, box, value = task
    problem = build_problem(cfg.problem, N)
    a_exp = alpha_exp_for(problem, cfg.alpha_exp_tol)
    alpha, rel = resolve_alpha(cfg, problem, value, cfg.dt)
    gamma = alpha / cfg.dt
    nu1, nu2 = cfg.sweeps[0]
    sc = SolverConfig("mg-gmres", box, CyclePolicy(nu1, nu2), GmresConfig(cfg.rel_tol, cfg.max_iter))
    state = SimulationState(0.0, problem.mesh, problem.geometry, problem.bc)
    t_end = cfg.dt * cfg.steps

    t = time.perf_counter()
    imp = run_simulation(state, SchemeParams(gamma, cfg.dt, "implicit"), cfg.steps, sc, strict=False)
    w_imp = 1e3 * (time.perf_counter() - t)
    dt_exp = cfg.explicit_safety * a_exp / gamma if gamma > 0 else cfg.dt
    t = time.perf_counter()
    exp = run_simulation(state, SchemeParams(gamma, dt_exp, "explicit"), cfg.steps, sc, strict=False)
    w_exp = 1e3 * (time.perf_counter() - t)
    explicit_total = exp.mean_iterations * t_end / dt_exp

    recs = []
    for scheme, traj, wall, a in (("implicit", imp, w_imp, alpha), ("explicit", exp, w_exp, gamma * dt_exp)):
        ok = all(s.converged for s in traj.steps)
        res = max(s.residual for s in traj.steps)
        recs.append(RunRecord(f"{cfg.problem}-{scheme}", N, box, nu1, nu2, "mg-gmres", a, a / a_exp,
                              traj.total_iterations, ok, res, wall,
                              extra={"iterations_per_step": traj.iterations,
                                     "centroid": traj.state.mesh.X.reshape(-1, 2).mean(axis=0)}))
    eff = EfficiencyRecord(rel, box, gamma, imp.total_iterations, imp.mean_iterations,
                           exp.mean_iterations, dt_exp, explicit_total)
    return recs, eff


def run_efficiency_study(cfg: ExperimentConfig, threads: int = 1):
    """Implicit runs at ``dt`` against explicit runs just below the stability
    limit; the explicit iteration total is extrapolated to the same end time."""
    tasks = [(cfg, N, box, v) for N in cfg.grids for box in cfg.boxes for v in cfg.stiffness_values]
    cells = _map(_efficiency_cell, tasks, threads)
    return [r for recs, _ in cells for r in recs], [e for _, e in cells]


def write_efficiency_csv(effs, path) -> None:
    cols = ("rel_stiffness", "box", "gamma", "implicit_total", "implicit_mean", "explicit_mean",
            "explicit_dt", "explicit_total", "efficiency")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for e in effs:
            d = asdict(e)
            d["efficiency"] = e.efficiency
            w.writerow([f"{d[c]:.6g}" if isinstance(d[c], float) else d[c] for c in cols])


# ---------------------------------------------------------------------------
# spectra and operator dumps


@dataclass
class SpectrumRecord:
    N: int
    box: int
    nu1: int
    nu2: int
    alpha: float
    rel_stiffness: float
    rho: float
    ritz_values: np.ndarray


def run_spectrum(cfg: ExperimentConfig) -> list[SpectrumRecord]:
    """Dominant Ritz values of the V-cycle iteration matrix."""
    out = []
    for N in cfg.grids:
        problem = build_problem(cfg.problem, N)
        for box in cfg.boxes:
            for nu1, nu2 in cfg.sweeps:
                for value in cfg.stiffness_values:
                    alpha, rel = resolve_alpha(cfg, problem, value)
                    hier = build_hierarchy(static_system(problem, alpha), CyclePolicy(nu1, nu2), box)
                    spec = iteration_matrix_spectrum(hier, SpectrumProbe(cfg.subspace_dim, cfg.seed))
                    out.append(SpectrumRecord(N, box, nu1, nu2, alpha, rel, spec.rho, spec.ritz_values))
    return out


def dense_operator(cfg: ExperimentConfig, N: int, value: float) -> np.ndarray:
    """Dense saddle matrix, elasticity block or cycle iteration matrix, built
    column by column from unit vectors."""
    problem = build_problem(cfg.problem, N)
    g = problem.geometry
    if g.n_dof > DENSE_DUMP_LIMIT:
        raise ValueError(f"{g.n_dof} unknowns exceed the dense dump limit of {DENSE_DUMP_LIMIT}")
    alpha, _ = resolve_alpha(cfg, problem, value) if value else (0.0, 0.0)
    system = static_system(problem, alpha)
    if cfg.operator == "elasticity":
        if system.elasticity is None:
            return np.zeros((g.n_vel, g.n_vel))
        return system.elasticity.scaled.toarray()
    if cfg.operator == "system":
        op, n = system.apply, g.n_dof
    else:
        nu1, nu2 = cfg.sweeps[0]
        op = iteration_matrix_operator(build_hierarchy(system, CyclePolicy(nu1, nu2), cfg.boxes[0]))
        n = g.n_dof
    out = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        out[:, j] = op(e)
        e[j] = 0.0
    return out


def write_dense(path, M: np.ndarray, comment: str = "") -> None:
    """Matrix Market ``array`` format (column-major values)."""
    scipy.io.mmwrite(str(path), np.asarray(M, dtype=float), comment=comment)


def read_dense(path) -> np.ndarray:
    return np.asarray(scipy.io.mmread(str(path)))


# ---------------------------------------------------------------------------
# mesh and field text formats


def write_fiber_mesh(mesh: FiberMesh, fh) -> None:
    """Header ``M1 M2 ds periodic_s1`` then one ``k l x y`` row per node."""
    M1, M2 = mesh.shape
    fh.write(f"{M1} {M2} {float(mesh.ds)!r} {int(mesh.periodic_s1)}\n")
    for k in range(M1):
        for l in range(M2):
            x, y = mesh.X[k, l]
            fh.write(f"{k} {l} {float(x)!r} {float(y)!r}\n")


def read_fiber_mesh(fh) -> FiberMesh:
    M1, M2, ds, per = fh.readline().split()
    M1, M2 = int(M1), int(M2)
    X = np.full((M1, M2, 2), np.nan)
    for line in fh:
        if line.strip():
            k, l, x, y = line.split()
            X[int(k), int(l)] = float(x), float(y)
    if np.isnan(X).any():
        raise ValueError("mesh file is missing nodes")
    return FiberMesh(X, float(ds), bool(int(per)))


def fiber_mesh_text(mesh: FiberMesh) -> str:
    buf = io.StringIO()
    write_fiber_mesh(mesh, buf)
    return buf.getvalue()


def write_field_snapshot(state: SaddleState, fh) -> None:
    """One ``component i j value`` line per DOF: ``u`` on x-faces, ``v`` on
    y-faces (boundary faces included) and ``p`` at cell centres; ``i`` is the
    column index and ``j`` the row index."""
    for name, arr in (("u", state.vel.u), ("v", state.vel.v), ("p", state.p.p)):
        for j, i in np.ndindex(arr.shape):
            fh.write(f"{name} {i} {j} {float(arr[j, i])!r}\n")


def read_field_snapshot(fh) -> dict[str, dict[tuple[int, int], float]]:
    out: dict[str, dict] = {"u": {}, "v": {}, "p": {}}
    for line in fh:
        if line.strip():
            name, i, j, val = line.split()
            out[name][int(i), int(j)] = float(val)
    return out
