"""Benchmark command line: generate or load a grid problem, solve it with a
chosen method, and emit machine-readable reports.

Exit codes: 0 success, 2 invalid problem or spec, 3 non-convergence,
4 dimension guard.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import DimensionGuardError, MaxIterationsExceeded
from .grid_problem import (
    generate_irrigation_case,
    generate_msd_case,
    load_problem,
    state_offsets,
    validate,
)
from .kkt_assembly import build_schur, build_splitting, build_stacked
from .nested_jacobi import NestedJacobiPreconditioner
from .pcg import cg_solve, pcg_solve
from .recovery import (
    condition_numbers,
    dense_reference_solve,
    kkt_residual,
    recover_solution,
    splitting_spectral_radii,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NO_CONVERGENCE = 3
EXIT_DIMENSION_GUARD = 4

CSV_COLUMNS = [
    "case", "K", "N", "T", "solver", "L", "S", "seed", "unknowns", "steps",
    "converged", "final_residual", "assembly_s", "factor_s", "solve_s",
    "objective", "kkt_stationarity_x", "kkt_stationarity_u", "kkt_dynamics",
    "kappa_delta", "kappa_preconditioned", "rho_inner_split", "rho_outer_split",
]

CASE_ALIASES = {
    "case1": "msd",
    "msd": "msd",
    "case2": "irrigation",
    "irrigation": "irrigation",
}


def _build_problem(args, size):
    if args.problem_file:
        problem = load_problem(args.problem_file)
        return problem, "file"
    case = CASE_ALIASES[args.case]
    k = args.K if args.K else size
    n = args.N if args.N else size
    t = args.T if args.T else size
    if case == "msd":
        return generate_msd_case(k, n, t, args.seed), case
    return generate_irrigation_case(k, n, t, seed=args.seed), case


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _emit(records, args, stream):
    if args.format == "csv":
        stream.write(",".join(CSV_COLUMNS) + "\n")
        for rec in records:
            stream.write(",".join(_fmt(rec.get(c)) for c in CSV_COLUMNS) + "\n")
    else:
        json.dump({"records": records}, stream, indent=2)
        stream.write("\n")


def _write_output(records, args):
    if args.output:
        with open(args.output, "w") as fh:
            _emit(records, args, fh)
    else:
        _emit(records, args, sys.stdout)


def _solve_record(problem, label, args, pool):
    lay = state_offsets(problem)
    rec = {
        "case": label,
        "K": problem.K,
        "N": problem.N,
        "T": problem.T,
        "solver": args.solver,
        "L": args.L if args.solver in ("pcgm", "nbjm") else None,
        "S": args.S if args.solver == "pcgm" else None,
        "seed": args.seed,
        "unknowns": lay.n_total,
    }
    status = EXIT_OK

    msgs = validate(problem)
    if msgs:
        for msg in msgs:
            print(f"invalid problem: {msg}", file=sys.stderr)
        return rec, EXIT_INVALID

    t0 = time.perf_counter()
    stacked = build_stacked(problem)
    schur = build_schur(stacked)
    assembly_s = time.perf_counter() - t0

    splitting = None
    precond = None
    factor_s = 0.0
    if args.solver in ("pcgm", "nbjm") or lay.n_total <= args.max_dense_dim:
        t0 = time.perf_counter()
        splitting = build_splitting(schur)
        precond = NestedJacobiPreconditioner(
            schur, inner_sweeps=args.L, outer_sweeps=args.S, splitting=splitting
        )
        factor_s = time.perf_counter() - t0

    sol = None
    t0 = time.perf_counter()
    try:
        if args.solver == "pcgm":
            lam, report = pcg_solve(
                schur, precond, stacked.offset, tol=args.tol,
                max_steps=args.max_steps, pool=pool,
            )
            rec["steps"] = report.steps
            rec["converged"] = report.converged
            rec["final_residual"] = report.final_residual
            sol = recover_solution(stacked, lam)
        elif args.solver == "cg":
            lam, report = cg_solve(
                schur, stacked.offset, tol=args.tol,
                max_steps=args.max_steps, pool=pool,
            )
            rec["steps"] = report.steps
            rec["converged"] = report.converged
            rec["final_residual"] = report.final_residual
            sol = recover_solution(stacked, lam)
        elif args.solver == "nbjm":
            lam, outers = precond.solve(
                stacked.offset, tol=args.tol, max_outer=args.max_outer,
                pool=pool,
            )
            rec["steps"] = outers
            rec["converged"] = True
            rec["final_residual"] = float(
                np.max(np.abs(schur.apply(lam) - stacked.offset))
            )
            sol = recover_solution(stacked, lam)
        elif args.solver == "dense":
            sol = dense_reference_solve(problem, max_dim=args.max_dense_dim)
            rec["steps"] = 1
            rec["converged"] = True
            rec["final_residual"] = float(
                np.max(np.abs(schur.apply(sol.multipliers) - stacked.offset))
            )
    except MaxIterationsExceeded as exc:
        rec["steps"] = exc.iterations
        rec["converged"] = False
        if exc.report is not None:
            rec["final_residual"] = exc.report.final_residual
        if exc.iterate is not None:
            if exc.report is None:
                rec["final_residual"] = float(
                    np.max(np.abs(schur.apply(exc.iterate) - stacked.offset))
                )
            sol = recover_solution(stacked, exc.iterate)
        status = EXIT_NO_CONVERGENCE
        print(f"solver did not converge: {exc}", file=sys.stderr)
    except DimensionGuardError as exc:
        print(f"dimension guard: {exc}", file=sys.stderr)
        return rec, EXIT_DIMENSION_GUARD
    solve_s = time.perf_counter() - t0

    if sol is not None:
        rec["objective"] = sol.objective_value
        rx, ru, rdyn = kkt_residual(stacked, sol)
        rec["kkt_stationarity_x"] = rx
        rec["kkt_stationarity_u"] = ru
        rec["kkt_dynamics"] = rdyn

    if lay.n_total <= args.max_dense_dim and precond is not None:
        cond = condition_numbers(schur, precond, max_dim=args.max_dense_dim)
        rec["kappa_delta"] = cond.kappa_delta
        rec["kappa_preconditioned"] = cond.kappa_preconditioned
        rho_inner, rho_outer = splitting_spectral_radii(
            schur, splitting, max_dim=args.max_dense_dim
        )
        rec["rho_inner_split"] = rho_inner
        rec["rho_outer_split"] = rho_outer

    if not args.omit_timings:
        rec["assembly_s"] = assembly_s
        rec["factor_s"] = factor_s
        rec["solve_s"] = solve_s
    return rec, status


def _add_common(parser):
    parser.add_argument("--case", choices=sorted(CASE_ALIASES), default="case1",
                        help="problem family (case1/msd or case2/irrigation)")
    parser.add_argument("--problem-file", help="load a problem JSON instead of generating")
    parser.add_argument("--size", type=int, help="K = N = T = SIZE")
    parser.add_argument("--K", type=int)
    parser.add_argument("--N", type=int)
    parser.add_argument("--T", type=int)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--L", type=int, default=2, help="inner sweep budget")
    parser.add_argument("--S", type=int, default=2, help="outer sweep budget")
    parser.add_argument("--tol", type=float, default=1e-9)
    parser.add_argument("--max-steps", type=int, default=None)
    parser.add_argument("--max-outer", type=int, default=50000)
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for the block-parallel maps")
    parser.add_argument("--max-dense-dim", type=int, default=2000,
                        help="cap for dense solves and conditioning diagnostics")
    parser.add_argument("--omit-timings", action="store_true",
                        help="blank the timing fields for reproducible reports")


def _parser():
    parser = argparse.ArgumentParser(
        prog="gridlq",
        description="Structured solver benchmark for grid-coupled LQ optimal control",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="solve one size or a sweep and emit a report")
    _add_common(run)
    run.add_argument("--sweep", help="comma-separated sizes, e.g. 2,3,4")
    run.add_argument("--solver", choices=["pcgm", "cg", "nbjm", "dense"],
                     default="pcgm")
    run.add_argument("--output", help="report file (stdout when omitted)")
    run.add_argument("--format", choices=["csv", "json"], default="csv")

    cmp_cmd = sub.add_parser("compare", help="run two solvers on the same problem")
    _add_common(cmp_cmd)
    cmp_cmd.add_argument("--solver-a", choices=["pcgm", "cg", "nbjm", "dense"],
                         default="pcgm")
    cmp_cmd.add_argument("--solver-b", choices=["pcgm", "cg", "nbjm", "dense"],
                         default="dense")
    return parser


def _sizes(args):
    if getattr(args, "sweep", None):
        sizes = [int(s) for s in args.sweep.split(",") if s.strip()]
        if not sizes:
            raise ValueError("empty sweep list")
        return sizes
    if args.size:
        return [args.size]
    if args.K or args.N or args.T:
        if not (args.K and args.N and args.T):
            raise ValueError("provide all of --K --N --T, or --size")
        return [None]
    if args.problem_file:
        return [None]
    raise ValueError("no problem size given (use --size, --sweep or --K/--N/--T)")


def _run(args):
    try:
        sizes = _sizes(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    pool = ThreadPoolExecutor(args.threads) if args.threads > 1 else None
    records = []
    status = EXIT_OK
    try:
        for size in sizes:
            problem, label = _build_problem(args, size)
            rec, code = _solve_record(problem, label, args, pool)
            records.append(rec)
            if code != EXIT_OK:
                status = code
                break
    finally:
        if pool is not None:
            pool.shutdown()
    _write_output(records, args)
    return status


def _run_single(problem, label, args, solver, pool):
    sub_args = argparse.Namespace(**vars(args))
    sub_args.solver = solver
    return _solve_record(problem, label, sub_args, pool)


def _compare(args):
    args.sweep = None
    try:
        _sizes(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    size = args.size
    pool = ThreadPoolExecutor(args.threads) if args.threads > 1 else None
    try:
        problem, label = _build_problem(args, size)
        rec_a, code_a = _run_single(problem, label, args, args.solver_a, pool)
        rec_b, code_b = _run_single(problem, label, args, args.solver_b, pool)
    finally:
        if pool is not None:
            pool.shutdown()

    fields = ["solver", "steps", "converged", "final_residual", "objective",
              "kkt_dynamics", "solve_s"]
    table = [["field", args.solver_a, args.solver_b]]
    table += [[f, _fmt(rec_a.get(f)), _fmt(rec_b.get(f))] for f in fields]
    widths = [max(len(row[c]) for row in table) + 2 for c in range(3)]
    for row in table:
        print("".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    if code_a or code_b:
        return code_a or code_b

    obj_a, obj_b = rec_a.get("objective"), rec_b.get("objective")
    if obj_a is None or obj_b is None:
        print("comparison incomplete: missing objective", file=sys.stderr)
        return 1
    scale = max(abs(obj_a), abs(obj_b), 1e-30)
    if abs(obj_a - obj_b) > 1e-6 * scale:
        print(
            f"objective mismatch: {obj_a!r} vs {obj_b!r} "
            f"(relative {abs(obj_a - obj_b) / scale:.3e})",
            file=sys.stderr,
        )
        return 1
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "run":
        return _run(args)
    return _compare(args)


if __name__ == "__main__":
    sys.exit(main())
