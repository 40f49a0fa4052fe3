"""Command line entry point: ``ibmg <subcommand> --config FILE --out DIR``.

Exit status is 0 when every solve converged, 2 when any solve stopped at the
iteration cap or diverged, and 1 on error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import harness as H
from .krylov import GmresConfig, SolverConfig, solve
from .multigrid import CyclePolicy
from .saddle import SaddleState
from .timestepper import estimate_alpha_exp

log = logging.getLogger("ibmg")


def _finish(records, out: Path, cfg) -> int:
    H.write_csv(records, out / "runs.csv")
    with open(out / "residuals.txt", "w") as fh:
        for r in records:
            hist = " ".join(f"{v:.6e}" for v in r.residuals)
            fh.write(f"{r.problem} {r.N} {r.box} {r.nu1} {r.nu2} {r.solver} {r.alpha:.6g} {hist}\n")
    n_bad = sum(not r.converged for r in records)
    log.info("%d runs, %d not converged", len(records), n_bad)
    return 0 if n_bad == 0 else 2


def _status(r) -> str:
    if r.converged:
        return ""
    return " (diverged)" if r.diverged else " (cap reached)"


def cmd_static_sweep(cfg, out: Path, args) -> int:
    records = H.run_static_sweep(cfg, args.threads)
    for r in records:
        print(f"N={r.N} box={r.box} nu=({r.nu1},{r.nu2}) {r.solver:8s} rel={r.rel_stiffness:8.3g} "
              f"iterations={r.iterations}{_status(r)}")
    if args.snapshots:
        _write_snapshots(cfg, out / "fields")
    return _finish(records, out, cfg)


def _write_snapshots(cfg, folder: Path) -> None:
    folder.mkdir(exist_ok=True)
    for N in cfg.grids:
        problem = H.build_problem(cfg.problem, N)
        for value in cfg.stiffness_values:
            alpha, _ = H.resolve_alpha(cfg, problem, value)
            system = H.static_system(problem, alpha)
            res = solve(system, SolverConfig("mg-gmres", cfg.boxes[0], CyclePolicy(*cfg.sweeps[0]),
                                             GmresConfig(cfg.rel_tol, cfg.max_iter)))
            state = SaddleState.from_vector(res.x, problem.geometry, problem.bc)
            with open(folder / f"field_N{N}_alpha{alpha:.6g}.txt", "w") as fh:
                H.write_field_snapshot(state, fh)


def cmd_refine_study(cfg, out: Path, args) -> int:
    records, verdicts = H.run_refinement_study(cfg, args.threads)
    with open(out / "refinement.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([cfg.stiffness_kind, "box"] + [f"N{n}" for n in cfg.grids] + ["spread", "grid_independent"])
        for v in verdicts:
            w.writerow([v.value, v.box] + [v.counts.get(n, "") for n in cfg.grids]
                       + [v.spread, int(v.grid_independent())])
            print(f"{cfg.stiffness_kind}={v.value:g} box={v.box}: "
                  + " ".join(f"{n}:{c}" for n, c in v.counts.items())
                  + f"  {'grid independent' if v.grid_independent() else 'grid dependent'}")
    return _finish(records, out, cfg)


def cmd_efficiency(cfg, out: Path, args) -> int:
    records, effs = H.run_efficiency_study(cfg, args.threads)
    H.write_efficiency_csv(effs, out / "efficiency.csv")
    for e in effs:
        print(f"box={e.box} rel={e.rel_stiffness:8.3g} implicit/step={e.implicit_mean:6.2f} "
              f"explicit/step={e.explicit_mean:6.2f} efficiency={e.efficiency:8.2f}")
    return _finish(records, out, cfg)


def cmd_alpha_exp(cfg, out: Path, args) -> int:
    rows = []
    for N in cfg.grids:
        problem = H.build_problem(cfg.problem, N)
        with open(out / f"mesh_N{N}.txt", "w") as fh:
            H.write_fiber_mesh(problem.mesh, fh)
        t = time.perf_counter()
        est = estimate_alpha_exp(problem.geometry, problem.mesh, cfg.alpha_exp_tol, seed=cfg.seed)
        wall = 1e3 * (time.perf_counter() - t)
        rows.append((N, problem.geometry.h, est.alpha_exp, est.rho, est.iterations, wall))
        print(f"N={N} h={problem.geometry.h:g} alpha_exp={est.alpha_exp:.4f} ({wall / 1e3:.1f} s)")
    with open(out / "alpha_exp.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "h", "alpha_exp", "rho", "matvecs", "wall_ms"])
        for r in rows:
            w.writerow([r[0], f"{r[1]:.6g}", f"{r[2]:.6g}", f"{r[3]:.6g}", r[4], f"{r[5]:.1f}"])
    return 0


def cmd_spectrum(cfg, out: Path, args) -> int:
    recs = H.run_spectrum(cfg)
    with open(out / "spectrum.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "box", "nu1", "nu2", "alpha", "rel_stiffness", "rho"])
        for r in recs:
            w.writerow([r.N, r.box, r.nu1, r.nu2, f"{r.alpha:.6g}", f"{r.rel_stiffness:.6g}", f"{r.rho:.6g}"])
            print(f"N={r.N} box={r.box} nu=({r.nu1},{r.nu2}) rel={r.rel_stiffness:8.3g} rho={r.rho:.4f}")
    with open(out / "ritz.txt", "w") as fh:
        for r in recs:
            vals = " ".join(f"{z.real:.6e}{z.imag:+.6e}j" for z in r.ritz_values)
            fh.write(f"{r.N} {r.box} {r.nu1} {r.nu2} {r.alpha:.6g} {vals}\n")
    return 0


def cmd_dump_operator(cfg, out: Path, args) -> int:
    for N in cfg.grids:
        for value in cfg.stiffness_values:
            M = H.dense_operator(cfg, N, value)
            path = out / f"{cfg.operator}_N{N}_{cfg.stiffness_kind}{value:g}.mtx"
            H.write_dense(path, M, comment=f"{cfg.problem} {cfg.operator} N={N} {cfg.stiffness_kind}={value:g}")
            print(f"wrote {path} ({M.shape[0]}x{M.shape[1]})")
    return 0


COMMANDS = {
    "static-sweep": (cmd_static_sweep, "iteration counts for static solves"),
    "refine-study": (cmd_refine_study, "MG-GMRES counts under grid refinement"),
    "efficiency": (cmd_efficiency, "implicit against explicit time stepping"),
    "alpha-exp": (cmd_alpha_exp, "explicit stability limit per grid"),
    "spectrum": (cmd_spectrum, "spectral radius of the V-cycle iteration matrix"),
    "dump-operator": (cmd_dump_operator, "dense operator in Matrix Market text"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ibmg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="INI file with an [experiment] section")
        sp.add_argument("--out", default="results", help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for sweep cells")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "static-sweep":
            sp.add_argument("--snapshots", action="store_true", help="also write velocity/pressure fields")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = H.load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(H.format_config(cfg))
        return COMMANDS[args.command][0](cfg, out, args)
    except Exception as exc:  # noqa: BLE001 - report and map to exit status 1
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
