"""Batch front door: offline / online / simulate / compare / feasible.

Every command reads one problem file, writes machine-readable artifacts into
the output directory (trace CSV + JSONL, certificate log, value grids,
trajectories, polynomial text files), and echoes the effective configuration
so a run can be reproduced from its own output.

Exit codes: 0 success, 2 validation failure, 3 solver or numerical failure,
4 learning timeout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .pi import (InfeasibleProgramError, InitialPolicyError,
                 PolicyIterationError, run_pi, robust_feasible_v0)
from .online import LearningTimeoutError, OnlineStepError, Schedule, run_online
from .poly import format_poly, parse_poly
from .problems import Problem, ValidationError, load_problem
from .sdp import SolverFailure, SolverOptions
from .sim import (FiniteEscapeError, NoiseSpec, OnlinePlant, StepControl,
                  integrate)
from .sos import CertificateError
from .systems import ValueFn

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_TIMEOUT = 4


def _write_effective_config(out: Path, problem: Problem, args,
                            extras: dict | None = None):
    cfg = {
        "polypi_version": __version__,
        "command": args.command,
        "problem_file": str(args.problem),
        "overrides": {
            "solver_tol": args.solver_tol,
            "max_iter": args.max_iter,
            "seed": args.seed,
        },
        "resolved": {
            "n": problem.n, "m": problem.m, "r": problem.r, "d": problem.d,
            "eps": problem.eps, "max_iter": problem.max_iter,
            "omega_lo": list(problem.omega.lo),
            "omega_hi": list(problem.omega.hi),
            "param_true": problem.param_true,
        },
    }
    if extras:
        cfg.update(extras)
    (out / "problem.toml").write_text(problem.source_text)
    (out / "effective_config.json").write_text(json.dumps(cfg, indent=2)
                                               + "\n")


def _solver_options(args) -> SolverOptions:
    if args.solver_tol is not None:
        return SolverOptions(feas_tol=args.solver_tol, gap_tol=args.solver_tol)
    return SolverOptions()


def _resolve_noise(problem: Problem, args) -> NoiseSpec:
    noise = problem.learning.noise
    if args.seed is not None:
        noise = noise.with_phases(np.random.default_rng(args.seed))
    return noise


def _write_certificates(out: Path, rows: list[str]):
    (out / "certificates.log").write_text("\n".join(rows) + "\n")


def _value_grid(out: Path, problem: Problem, values: list[tuple[str, object]],
                per_axis: int = 101):
    """Sample named value functions (and the analytic reference) over Omega."""
    pts = problem.omega.grid(per_axis if problem.n == 1
                             else max(3, int(round(2000 ** (1 / problem.n)))))
    header = [f"x{i + 1}" for i in range(problem.n)]
    columns = []
    for label, fn in values:
        header.append(label)
        columns.append([fn(pt) for pt in pts])
    if problem.reference is not None:
        header.append("reference")
        columns.append([problem.reference(pt) for pt in pts])
    with open(out / "value_grid.csv", "w") as fh:
        fh.write(",".join(header) + "\n")
        for idx, pt in enumerate(pts):
            row = [repr(float(v)) for v in pt] \
                + [repr(float(col[idx])) for col in columns]
            fh.write(",".join(row) + "\n")


def cmd_offline(problem: Problem, out: Path, args) -> int:
    opts = _solver_options(args)
    V0 = problem.initial_value(opts)
    trace = run_pi(problem.plant(), problem.cost, V0, problem.u1, problem.r,
                   problem.omega, problem.eps, problem.max_iter, opts)
    trace.write_csv(out / "trace.csv")
    trace.write_jsonl(out / "trace.jsonl")
    _write_certificates(out, [
        f"iter {rec.i}: status={rec.status} objective={rec.objective!r} "
        f"h_max={rec.h_max!r}" for rec in trace.records])
    V_final = trace.final_value(problem.n, problem.r)
    u_final = trace.final_policy(problem.n, problem.d)
    (out / "v0.txt").write_text(format_poly(V0.polynomial()) + "\n")
    (out / "v_final.txt").write_text(format_poly(V_final.polynomial()) + "\n")
    (out / "u_final.txt").write_text(
        "\n".join(format_poly(p) for p in u_final.polynomials()) + "\n")
    labels = [(f"V{rec.i}", ValueFn(problem.n, problem.r, rec.p))
              for rec in trace.records]
    _value_grid(out, problem, [("V0", V0)] + labels)
    print(f"offline: {trace.message}; final objective "
          f"{trace.records[-1].objective:.6f}")
    return EXIT_OK


def cmd_online(problem: Problem, out: Path, args) -> int:
    if problem.learning is None:
        raise ValidationError("learning", "online command requires a "
                                          "learning block")
    opts = _solver_options(args)
    lc = problem.learning
    noise = _resolve_noise(problem, args)
    V0 = problem.initial_value(opts)
    plant = OnlinePlant(problem.plant(), problem.cost, lc.x0,
                        StepControl(h=lc.h))
    schedule = Schedule(window=lc.window, delta_t=lc.delta_t, noise=noise,
                        max_iter=(args.max_iter or lc.max_iter))
    trace = run_online(plant, problem.cost, V0, problem.u1, problem.r,
                       problem.d, problem.omega, problem.eps, schedule, opts)
    # learning done: exploration off, keep flying the final policy
    u_final = trace.final_policy(problem.n, problem.d)
    quiet = NoiseSpec.zero(problem.m)
    if lc.impulse_t is not None and lc.impulse_t >= plant.time:
        lead = lc.impulse_t - plant.time
        if lead > 0:
            plant.run_plain(u_final, quiet, lead)
        plant.kick(lc.impulse_dx)
        plant.run_plain(u_final, quiet, lc.t_post)
    else:
        plant.run_plain(u_final, quiet, lc.t_post)

    trace.write_csv(out / "trace.csv")
    trace.write_jsonl(out / "trace.jsonl")
    _write_certificates(out, [
        f"iter {rec.i}: status={rec.status} objective={rec.objective!r} "
        f"residual={rec.residual!r} rank={rec.rank}"
        for rec in trace.records])
    plant.full_trajectory().write_csv(out / "trajectory.csv")
    V_final = trace.final_value(problem.n, problem.r)
    (out / "v_final.txt").write_text(format_poly(V_final.polynomial()) + "\n")
    (out / "u_final.txt").write_text(
        "\n".join(format_poly(p) for p in u_final.polynomials()) + "\n")
    _value_grid(out, problem, [("V0", V0), ("V_final", V_final)])
    print(f"online: {trace.message}; final objective "
          f"{trace.records[-1].objective:.6f}")
    return EXIT_OK


def cmd_simulate(problem: Problem, out: Path, args) -> int:
    if problem.learning is None:
        raise ValidationError("learning", "simulate command requires a "
                                          "learning block (x0, noise, h)")
    lc = problem.learning
    noise = _resolve_noise(problem, args)
    duration = args.duration if args.duration is not None else lc.t_post
    traj = integrate(problem.plant(), problem.cost, problem.u1, noise,
                     lc.x0, (0.0, duration), StepControl(h=lc.h),
                     data_degree=problem.d)
    traj.write_csv(out / "trajectory.csv")
    from .sim import collect_intervals
    parts = collect_intervals(traj, lc.delta_t, problem.r)
    with open(out / "intervals.csv", "w") as fh:
        width = len(parts[0].sigma)
        fh.write(",".join(["t0", "t1", "cost"]
                          + [f"sigma{i}" for i in range(width)]
                          + [f"vdiff{i}" for i in
                             range(len(parts[0].v_basis_diff))]) + "\n")
        for part in parts:
            fh.write(",".join([repr(part.t0), repr(part.t1), repr(part.cost)]
                              + [repr(float(v)) for v in part.sigma]
                              + [repr(float(v)) for v in part.v_basis_diff])
                     + "\n")
    print(f"simulate: {len(traj.t)} samples over {duration}s, "
          f"{len(parts)} intervals")
    return EXIT_OK


def cmd_compare(problem: Problem, out: Path, args) -> int:
    values: list[tuple[str, object]] = []
    for vf in args.value_fns:
        vf_path = Path(vf)
        poly = parse_poly(vf_path.read_text().strip(), problem.n)
        values.append((vf_path.stem, poly))
    _value_grid(out, problem, values)
    print(f"compare: wrote grid with {len(values)} value function(s)"
          + (" + reference" if problem.reference is not None else ""))
    return EXIT_OK


def cmd_feasible(problem: Problem, out: Path, args) -> int:
    if problem.family is None:
        raise ValidationError("system.params",
                              "feasible command requires a parameter box")
    opts = _solver_options(args)
    try:
        V0, certs = robust_feasible_v0(problem.family, problem.u1,
                                       problem.cost, problem.r, opts)
    except InfeasibleProgramError as err:
        sol = err.solution
        detail = "" if sol is None else \
            f" (backend {sol.backend}, raw status {sol.raw_status})"
        print(f"feasible: no certificate at degree {2 * problem.r}{detail}",
              file=sys.stderr)
        raise
    (out / "v0.txt").write_text(format_poly(V0.polynomial()) + "\n")
    _write_certificates(out, [
        f"constraint {i}: recon_residual={c.reconstruction_residual!r} "
        f"eig_min={c.min_eigenvalue!r}" for i, c in enumerate(certs)])
    print(f"feasible: wrote V0 with {len(certs)} certificates")
    return EXIT_OK


COMMANDS = {
    "offline": cmd_offline,
    "online": cmd_online,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "feasible": cmd_feasible,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polypi",
        description="SOS policy iteration and online adaptive dynamic "
                    "programming for polynomial systems")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--problem", required=True, help="problem file (TOML)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="randomize exploration-noise phases")
        p.add_argument("--solver-tol", type=float, default=None,
                       dest="solver_tol",
                       help="feasibility and gap tolerance for the solver")
        p.add_argument("--max-iter", type=int, default=None, dest="max_iter",
                       help="override the iteration budget")
        if name == "simulate":
            p.add_argument("--duration", type=float, default=None)
        if name == "compare":
            p.add_argument("value_fns", nargs="+",
                           help="polynomial text files to sample")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        problem = load_problem(args.problem)
        if args.max_iter is not None:
            problem.max_iter = args.max_iter
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_effective_config(out, problem, args)
        return COMMANDS[args.command](problem, out, args)
    except ValidationError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except InitialPolicyError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except LearningTimeoutError as err:
        print(f"learning timeout: {err}", file=sys.stderr)
        return EXIT_TIMEOUT
    except (InfeasibleProgramError, PolicyIterationError, SolverFailure,
            OnlineStepError, CertificateError, FiniteEscapeError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
