"""Command-line driver: simulation runs, benchmarks, verification and mesh export."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import parallel
from .config import ConfigError, ScenarioConfig, build_mesh, build_problem, load_config, probe_points, solver_settings
from .membrane import MembraneDomainError
from .mesh import export_mesh
from .output import fmt
from .solver import MODES
from .system import ConvergenceError, Stepper, run_simulation

log = logging.getLogger("knpemi")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _int_list(text):
    vals = [int(v) for v in text.replace(",", " ").split()]
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _thread_list(text):
    vals = _int_list(text)
    if any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"thread counts must be >= 1, got {text}")
    return vals


def _float_list(text):
    vals = [float(v) for v in text.replace(",", " ").split()]
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _mode_list(text):
    vals = text.replace(",", " ").split()
    for v in vals:
        if v not in MODES:
            raise argparse.ArgumentTypeError(f"unknown mode {v!r} (valid: {', '.join(MODES)})")
    return vals


def _common(p):
    p.add_argument("--config", type=Path, help="scenario file (default: Model A in 2D)")
    p.add_argument("--threads", type=_positive_int, help="worker threads (fallback: KNPEMI_THREADS)")
    p.add_argument("--out", type=Path, help="output directory or file")
    p.add_argument("--precond", choices=MODES, help="preconditioner mode")
    p.add_argument("--tol", type=float, help="relative tolerance of the preconditioned residual")
    p.add_argument("--restart", type=_positive_int, help="GMRES restart length")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="knpemi", description="KNP-EMI electrodiffusion solver")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a simulation")
    _common(p)
    p.add_argument("--steps", type=int, help="override the number of time steps")

    p = sub.add_parser("bench-robustness", help="iteration counts over mesh size, degree and time step")
    _common(p)
    p.add_argument("--n-x", type=_int_list, default=[16, 32, 64])
    p.add_argument("--degrees", type=_int_list, default=[1])
    p.add_argument("--dt-ms", type=_float_list, default=[0.01, 0.1, 1.0, 10.0, 100.0])
    p.add_argument("--modes", type=_mode_list, default=None, help="preconditioner modes (default: --precond)")
    p.add_argument("--steps", type=_positive_int, default=10)

    p = sub.add_parser("bench-threads", help="timings and iteration counts across thread counts")
    _common(p)
    p.add_argument("--thread-list", type=_thread_list, default=[1, 2, 4, 8])
    p.add_argument("--steps", type=_positive_int, default=5)

    p = sub.add_parser("verify", help="run the verification suites")
    _common(p)
    p.add_argument("--suites", default="oracle,mms,cross,invariants")

    p = sub.add_parser("mesh", help="mesh utilities")
    msub = p.add_subparsers(dest="mesh_command", required=True)
    e = msub.add_parser("export", help="write the scenario mesh in knpemi-mesh format")
    _common(e)
    return ap


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    s = cfg.solver
    if args.precond:
        s = replace(s, precond=args.precond)
    if args.tol is not None:
        s = replace(s, tol=args.tol)
    if args.restart is not None:
        s = replace(s, restart=args.restart)
    cfg = replace(cfg, solver=s)
    if getattr(args, "steps", None) is not None and args.command == "run":
        cfg = replace(cfg, time=replace(cfg.time, n_steps=args.steps))
    return cfg


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("KNPEMI_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ConfigError(f"KNPEMI_THREADS must be >= 1, got {n}")
        return n
    return 1


def cmd_run(args) -> int:
    cfg = _config(args)
    out = args.out or Path(cfg.output.dir)
    problem = build_problem(cfg)
    settings = solver_settings(cfg)
    log.info("N = %d unknowns, %d steps of %s s", problem.size, cfg.time.n_steps, fmt(cfg.time.dt))
    try:
        res = run_simulation(problem, settings, cfg.time.n_steps, probes=probe_points(cfg), out_dir=out,
                             snapshot_every=cfg.output.snapshot_every)
    except ConvergenceError as exc:
        hist = exc.result.residuals[-5:] if exc.result is not None else []
        print(f"error: {exc}; last residuals {[fmt(r) for r in hist]}", file=sys.stderr)
        return 1
    except MembraneDomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    its = res.iterations
    summary = f"done: {len(its)} steps, N = {problem.size}"
    if its:
        summary += f", GMRES iterations mean {np.mean(its):.2f} max {max(its)}"
    print(summary)
    print(f"outputs in {out}")
    return 0


def robustness_row(cfg, n_x, degree, dt, mode, steps):
    """One configuration of the robustness sweep; never raises on non-convergence."""
    c = replace(cfg, geometry=replace(cfg.geometry, n_x=n_x, degree=degree), time=replace(cfg.time, dt=dt))
    problem = build_problem(c)
    settings = solver_settings(c, precond=mode, raise_on_failure=False)
    stepper = Stepper(problem, settings)
    state = problem.initial_state()
    its, setup, solve, capped = [], 0.0, 0.0, False
    for _ in range(steps):
        state, info = stepper.step(state)
        its.append(info.iterations)
        setup += info.setup_s
        solve += info.solve_s
        capped |= not info.converged
        if capped:
            break
    return {
        "N_x": n_x, "p": degree, "dt_s": dt, "mode": mode, "N": problem.size,
        "mean_iters": float(np.mean(its)), "max_iters": int(max(its)),
        "status": "cap_reached" if capped else "converged", "setup_s": setup, "solve_s": solve,
    }


ROBUSTNESS_HEADER = ["N_x", "p", "dt_s", "mode", "N", "mean_iters", "max_iters", "status", "setup_s", "solve_s"]


def cmd_bench_robustness(args) -> int:
    cfg = _config(args)
    modes = args.modes or [cfg.solver.precond]
    out = args.out or Path("robustness.csv")
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "robustness.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROBUSTNESS_HEADER)
        for degree in args.degrees:
            for n_x in args.n_x:
                for dt_ms in args.dt_ms:
                    for mode in modes:
                        row = robustness_row(cfg, n_x, degree, dt_ms * 1e-3, mode, args.steps)
                        w.writerow([fmt(row[k]) if isinstance(row[k], float) else row[k] for k in ROBUSTNESS_HEADER])
                        fh.flush()
                        print(f"N_x={n_x} p={degree} dt={dt_ms} ms {mode}: N={row['N']} "
                              f"iterations mean {row['mean_iters']:.2f} max {row['max_iters']} ({row['status']})")
    print(f"wrote {out}")
    return 0


def thread_run(cfg, threads: int, steps: int) -> dict:
    parallel.set_threads(threads)
    t0 = time.perf_counter()
    problem = build_problem(cfg)
    stepper = Stepper(problem, solver_settings(cfg))
    assembly = time.perf_counter() - t0
    state = problem.initial_state()
    its, solve, setup = [], 0.0, 0.0
    for _ in range(steps):
        state, info = stepper.step(state)
        its.append(info.iterations)
        solve += info.solve_s
        setup += info.setup_s
    return {"threads": threads, "N": problem.size, "iterations": its, "assembly_s": assembly + setup,
            "solve_s": solve, "state": state.vector(problem.layout)}


def cmd_bench_threads(args) -> int:
    cfg = _config(args)
    out = args.out or Path("threads.csv")
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "threads.csv"
    thread_run(cfg, args.thread_list[0], 1)  # compile kernels outside the timings
    rows = [thread_run(cfg, n, args.steps) for n in args.thread_list]
    parallel.set_threads(_threads(args))
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threads", "N", "iterations", "assembly_s", "solve_s"])
        for r in rows:
            w.writerow([r["threads"], r["N"], " ".join(map(str, r["iterations"])), fmt(r["assembly_s"]),
                        fmt(r["solve_s"])])
    same_its = all(r["iterations"] == rows[0]["iterations"] for r in rows)
    same_state = all(np.array_equal(r["state"], rows[0]["state"]) for r in rows)
    for r in rows:
        print(f"threads={r['threads']}: iterations {r['iterations']} assembly {r['assembly_s']:.3f} s "
              f"solve {r['solve_s']:.3f} s")
    print(f"iteration counts identical: {same_its}; solutions bit-identical: {same_state}")
    print(f"wrote {out}")
    return 0 if same_its else 1


def cmd_verify(args) -> int:
    from .verify.suites import run_suites

    suites = [s.strip() for s in args.suites.split(",") if s.strip()]
    results = run_suites(suites)
    ok = True
    for r in results:
        print(f"{r.name}: {'PASS' if r.passed else 'FAIL'} - {r.detail}")
        ok &= r.passed
    return 0 if ok else 1


def cmd_mesh_export(args) -> int:
    cfg = _config(args)
    mesh = build_mesh(cfg)
    out = args.out or Path("mesh.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    export_mesh(mesh, out)
    print(f"wrote {out}: {mesh.n_vertices} vertices, {mesh.n_cells} cells")
    return 0


COMMANDS = {"run": cmd_run, "bench-robustness": cmd_bench_robustness, "bench-threads": cmd_bench_threads,
            "verify": cmd_verify}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        parallel.set_threads(_threads(args))
        if args.command == "mesh":
            return cmd_mesh_export(args)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
