"""Time the solve sweep with the compiled kernels and with the numpy fallback.

    python benchmarks/bench_apply.py --k 64 128 256 --repeat 5
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from lorasp import SolverConfig, factorize, load_problem
from lorasp.solve import BACKEND, apply_inverse


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--k", type=int, nargs="+", default=[64, 128, 256],
                   help="grid points per axis of the 2D Poisson problems")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--mode", default="gc-constant")
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if BACKEND != "compiled":
        raise SystemExit("compiled kernels are not built; run `pip install -e .` first")
    print(f"{'n':>8} {'nodes':>7} {'compiled_s':>11} {'python_s':>9} {'speedup':>8} {'max_diff':>9}")
    for k in args.k:
        prob = load_problem(f"poisson2d:k={k}")
        fac = factorize(prob.A, cfg=SolverConfig(eps=args.eps, mode=args.mode),
                        coords=prob.coords)
        b = np.random.default_rng(0).standard_normal(prob.n)
        tc = _best(lambda: apply_inverse(fac, b, "compiled"), args.repeat)
        tp = _best(lambda: apply_inverse(fac, b, "python"), args.repeat)
        diff = np.abs(apply_inverse(fac, b, "compiled") - apply_inverse(fac, b, "python")).max()
        print(f"{prob.n:>8} {fac.flat.num_nodes:>7} {tc:>11.4f} {tp:>9.4f} {tp / tc:>8.1f} "
              f"{diff:>9.1e}")


if __name__ == "__main__":
    main()
