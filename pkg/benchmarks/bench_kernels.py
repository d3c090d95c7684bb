"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 250]

Prints one row per kernel with the best-of-``repeat`` wall time of each
backend and the speedup. Both backends see identical inputs.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from mvrank import kernels
from mvrank import _kernels_py as py

try:
    from mvrank import _kernels as cy
except ImportError:  # extension not built
    cy = None


def cases(n, rng):
    mvn = np.ascontiguousarray(rng.standard_normal((n, 21, 10)))
    grf = np.ascontiguousarray(rng.standard_normal((n, 21, 900)))
    fields = grf.reshape(n * 21, 30, 30).copy()
    return {
        "dim_rank_stats mvn": ("dim_rank_stats", (mvn,)),
        "dim_rank_stats grf": ("dim_rank_stats", (grf,)),
        "dominance_counts grf": ("dominance_counts", (grf,)),
        "pairwise_distances grf": ("pairwise_distances", (grf,)),
        "lag_variogram mvn": ("lag_variogram", (mvn.reshape(-1, 10).copy(), 1)),
        "grid_variogram (1,0)": ("grid_variogram", (fields, 1, 0)),
        "grid_variogram (-1,1)": ("grid_variogram", (fields, -1, 1)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=250, help="cases per block")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"default backend: {kernels.BACKEND}")
    if cy is None:
        print("compiled extension not available; timing the fallback only")
    print(f"{'kernel':<26}{'python [ms]':>13}{'compiled [ms]':>15}{'speedup':>9}")
    for label, (fn, inputs) in cases(args.n, rng).items():
        t_py = min(timeit.repeat(lambda: getattr(py, fn)(*inputs), number=1, repeat=args.repeat))
        if cy is None:
            print(f"{label:<26}{t_py * 1e3:>13.2f}{'-':>15}{'-':>9}")
            continue
        t_cy = min(timeit.repeat(lambda: getattr(cy, fn)(*inputs), number=1, repeat=args.repeat))
        print(f"{label:<26}{t_py * 1e3:>13.2f}{t_cy * 1e3:>15.2f}{t_py / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
