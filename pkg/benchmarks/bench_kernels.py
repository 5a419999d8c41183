"""Compare the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from cavityforge import _fallback

try:
    from cavityforge import _kernels as compiled
except ImportError:
    compiled = None


def hankel_case(n_rho, n_nodes, seed=0):
    rng = np.random.default_rng(seed)
    rho = np.linspace(0.0, 3.0, n_rho)
    s = np.sort(rng.uniform(0.0, 1.0, n_nodes))
    return rho, s, rng.normal(size=n_nodes), rng.normal(size=n_nodes), 2.0 * np.pi


def bilinear_case(size, n_points, seed=0):
    rng = np.random.default_rng(seed)
    img = rng.normal(size=(size, size))
    return img, rng.uniform(-1, size, n_points), rng.uniform(-1, size, n_points), 1.0


CASES = [
    ("hankel_sum", "600 rho x 2049 nodes", hankel_case, (600, 2049)),
    ("hankel_sum", "3000 rho x 4097 nodes", hankel_case, (3000, 4097)),
    ("bilinear_sample", "512^2 image, 2.6e5 points", bilinear_case, (512, 512 * 512)),
    ("bilinear_sample", "2048^2 image, 4.2e6 points", bilinear_case, (2048, 2048 * 2048)),
]


def best_of(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description="Time compiled vs fallback kernels.")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled kernels are not built; timing the fallback only", file=sys.stderr)
    rows = []
    print(f"{'kernel':<16} {'case':<28} {'fallback s':>11} {'cython s':>10} {'speedup':>8}")
    for name, label, make, params in CASES:
        case = make(*params)
        t_py = best_of(getattr(_fallback, name), case, args.repeat)
        row = {"kernel": name, "case": label, "fallback_s": t_py}
        if compiled is not None:
            fn = getattr(compiled, name)
            a, b = getattr(_fallback, name)(*case), fn(*case)
            # both return either an array or a (re, im) pair
            a, b = np.asarray(a), np.asarray(b)
            row["max_abs_diff"] = float(np.max(np.abs(a - b)))
            row["cython_s"] = best_of(fn, case, args.repeat)
            row["speedup"] = t_py / row["cython_s"]
            print(f"{name:<16} {label:<28} {t_py:>11.4f} {row['cython_s']:>10.4f} "
                  f"{row['speedup']:>7.1f}x")
        else:
            print(f"{name:<16} {label:<28} {t_py:>11.4f} {'-':>10} {'-':>8}")
        rows.append(row)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
