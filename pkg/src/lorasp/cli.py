"""Command-line harness: benchmark sweeps, single solves and diagnostics.

Examples
--------
    lorasp --problem poisson2d:k=32 --eps 0.1 --mode lorasp,gc-constant --solver gmres
    lorasp --problem poisson2d --sweep n=32..512 --eps 0.1 --solver stationary
    lorasp --problem mm:matrix.mtx --mode gc-constant --action solve --rhs ones
    lorasp --problem poisson2d:k=32 --action diag --eps 0.1
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from .diagnostics import MAX_DENSE_N, diagnostics_report, report_json
from .errors import SolverError, UnsupportedError
from .factor import SolverConfig, factorize
from .krylov import gmres_solve, stationary_solve
from .problems import Problem, load_problem, random_rhs

__all__ = ["main", "build_parser", "CSV_HEADER", "run_bench"]

CSV_HEADER = ["problem", "n", "tree_depth", "eps", "eps_schedule", "mode", "solver",
              "iterations", "final_residual", "factor_time_s", "solve_time_s", "factor_entries"]
CLI_MODES = ("lorasp", "gc-constant", "gc-eigenvector")
SOLVERS = ("gmres", "stationary")
DEFAULT_TOL = {"gmres": 1e-10, "stationary": 1e-6}

log = logging.getLogger("lorasp")


class UsageError(Exception):
    pass


def _csv_list(text, conv=str, allowed=None):
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            val = conv(item)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {item!r}") from None
        if allowed is not None and val not in allowed:
            raise argparse.ArgumentTypeError(
                f"invalid choice {item!r} (choose from {', '.join(allowed)})")
        out.append(val)
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lorasp",
        description="Hierarchical solver benchmarks on sparse SPD problems.")
    p.add_argument("--problem", action="append", required=True,
                   help="problem string, e.g. poisson2d:k=128:coeff=random:seed=7 or mm:file.mtx "
                        "(repeatable)")
    p.add_argument("--eps", type=lambda s: _csv_list(s, float), default=[0.1],
                   help="compression tolerance(s), comma separated (default 0.1)")
    p.add_argument("--eps-schedule", choices=("const", "leaf", "root"), default="const")
    p.add_argument("--leaf-size", type=int, default=8)
    p.add_argument("--mode", type=lambda s: _csv_list(s, str, CLI_MODES), default=["lorasp"],
                   help="comma separated subset of " + ",".join(CLI_MODES))
    p.add_argument("--solver", type=lambda s: _csv_list(s, str, SOLVERS), default=["gmres"],
                   help="comma separated subset of gmres,stationary")
    p.add_argument("--tol", type=float, default=None,
                   help="stopping tolerance (default 1e-10 for gmres, 1e-6 for stationary)")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--seed", type=int, default=0, help="seed of the random exact solution")
    p.add_argument("--out", default=None,
                   help="JSON report (bench, diag, factor-stats) or solution file (solve)")
    p.add_argument("--action", choices=("bench", "solve", "diag", "factor-stats"), default="bench")
    p.add_argument("--sweep", default=None,
                   help="grid sweep over points per axis, e.g. n=32..512 (doubling) or n=16,32")
    p.add_argument("--rhs", choices=("random", "ones"), default="random",
                   help="right-hand side for --action solve")
    p.add_argument("--predicate", choices=("graph", "geometric"), default=None,
                   help="neighbor predicate (default geometric when coordinates exist)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _parse_sweep(text):
    key, _, rng = text.partition("=")
    if key not in ("n", "k") or not rng:
        raise UsageError(f"bad --sweep {text!r}; expected n=LO..HI or n=A,B,...")
    try:
        if ".." in rng:
            lo, hi = (int(v) for v in rng.split(".."))
            if lo < 2 or hi < lo:
                raise ValueError
            out = []
            k = lo
            while k <= hi:
                out.append(k)
                k *= 2
            return out
        return [int(v) for v in rng.split(",")]
    except ValueError:
        raise UsageError(f"bad --sweep range {rng!r}") from None


def _expand_problems(args):
    texts = []
    for prob in args.problem:
        if args.sweep and not prob.startswith("mm:"):
            head, *fields = prob.split(":")
            fields = [f for f in fields if not f.startswith("k=")]
            for k in _parse_sweep(args.sweep):
                texts.append(":".join([head, f"k={k}", *fields]))
        else:
            texts.append(prob)
    probs = []
    for t in texts:
        try:
            probs.append(load_problem(t))
        except (ValueError, OSError) as exc:
            raise UsageError(f"cannot load problem {t!r}: {exc}") from None
    return probs


_SCHEDULE = {"const": "constant", "leaf": "leaf", "root": "root"}


def _factorize(prob: Problem, eps, mode, args):
    cfg = SolverConfig(eps=eps, eps_schedule=_SCHEDULE[args.eps_schedule],
                       leaf_size=args.leaf_size, mode=mode, predicate=args.predicate,
                       h=prob.h if prob.h is not None else 1.0 / (np.sqrt(prob.n) + 1))
    preserve = prob.eigenvector() if mode == "gc-eigenvector" else None
    return factorize(prob.A, cfg=cfg, preserve=preserve, coords=prob.coords), preserve


def _solve(prob, fac, solver, args, b, x_star=None):
    tol = args.tol if args.tol is not None else DEFAULT_TOL[solver]
    if solver == "gmres":
        return gmres_solve(prob.A, b, fac, tol=tol, max_iter=args.max_iter)
    return stationary_solve(prob.A, b, fac, tol=tol, x_star=x_star, max_iter=args.max_iter)


def _row_key(r):
    # family first so that k=32 sorts before k=128
    family = ":".join(f for f in r["problem"].split(":") if not f.startswith("k="))
    return (family, r["n"], r["problem"], r["eps"], r["mode"], r["solver"])


def run_bench(args, out=None):
    """Run every (problem, eps, mode, solver) combination; CSV to ``out``."""
    out = out or sys.stdout
    rows, records = [], []
    for prob in _expand_problems(args):
        b, x_star = random_rhs(prob.A, args.seed)
        for eps in args.eps:
            for mode in args.mode:
                fac, _ = _factorize(prob, eps, mode, args)
                for solver in args.solver:
                    rep = _solve(prob, fac, solver, args, b, x_star)
                    row = {
                        "problem": prob.name, "n": prob.n, "tree_depth": fac.depth,
                        "eps": eps, "eps_schedule": args.eps_schedule, "mode": mode,
                        "solver": solver, "iterations": rep.iterations,
                        "final_residual": f"{rep.final_residual:.3e}",
                        "factor_time_s": f"{fac.factor_time:.3f}",
                        "solve_time_s": f"{rep.wall_time:.3f}",
                        "factor_entries": fac.factor_entries,
                    }
                    rows.append(row)
                    records.append({**row, "converged": rep.converged, "diverged": rep.diverged,
                                    "report": rep.to_dict(), "factor_stats": fac.stats_dict()})
                    log.info("%s eps=%g %s %s: %d iterations", prob.name, eps, mode, solver,
                             rep.iterations)
    rows.sort(key=_row_key)
    records.sort(key=_row_key)
    w = csv.DictWriter(out, fieldnames=CSV_HEADER, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report_json({"rows": records}, indent=2))
    return records


def run_solve(args, out=None):
    out = out or sys.stdout
    probs = _expand_problems(args)
    if len(probs) != 1 or len(args.eps) != 1 or len(args.mode) != 1 or len(args.solver) != 1:
        raise UsageError("--action solve takes exactly one problem, eps, mode and solver")
    prob = probs[0]
    if args.rhs == "ones":
        b, x_star = np.ones(prob.n), None
    else:
        b, x_star = random_rhs(prob.A, args.seed)
    fac, _ = _factorize(prob, args.eps[0], args.mode[0], args)
    rep = _solve(prob, fac, args.solver[0], args, b, x_star)
    res = float(np.linalg.norm(b - prob.A @ rep.x) / np.linalg.norm(b))
    path = args.out or "solution.txt"
    np.savetxt(path, rep.x, fmt="%.17g")
    print(f"iterations {rep.iterations} converged {str(rep.converged).lower()} "
          f"relative_residual {res:.3e} solution {path}", file=out)
    return rep


def run_diagnostics(args, out=None):
    out = out or sys.stdout
    rows = []
    for prob in _expand_problems(args):
        if prob.n > MAX_DENSE_N:
            raise UsageError(f"diagnostics refuse n = {prob.n} > {MAX_DENSE_N}")
        for eps in args.eps:
            for mode in args.mode:
                fac, preserve = _factorize(prob, eps, mode, args)
                if mode == "gc-constant":
                    preserve = np.ones(prob.n)
                rep = diagnostics_report(fac, prob.A, preserve)
                rep["problem"] = prob.name
                rows.append(rep)
    text = report_json({"diagnostics": rows}, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, file=out)
    return rows


def run_factor_stats(args, out=None):
    out = out or sys.stdout
    rows = []
    for prob in _expand_problems(args):
        for eps in args.eps:
            for mode in args.mode:
                fac, _ = _factorize(prob, eps, mode, args)
                rows.append({"problem": prob.name, **fac.stats_dict()})
    text = report_json({"factorizations": rows}, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, file=out)
    return rows


ACTIONS = {"bench": run_bench, "solve": run_solve, "diag": run_diagnostics,
           "factor-stats": run_factor_stats}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.leaf_size < 1 or args.max_iter < 1:
        parser.error("--leaf-size and --max-iter must be positive")
    if any(not 0 <= e < 1 for e in args.eps):
        parser.error("--eps values must lie in [0, 1)")
    try:
        ACTIONS[args.action](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lorasp: error: {exc}", file=sys.stderr)
        return 2
    except UnsupportedError as exc:
        print(f"lorasp: unsupported: {exc}", file=sys.stderr)
        return 2
    except (SolverError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"lorasp: numerical error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
