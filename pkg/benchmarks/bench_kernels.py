"""Compare the numba and numpy kernels, and time one drift solve under each backend.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from sosreach import _kernels


def best_of(fn, repeat):
    fn()  # warm up (includes numba compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def schur_case(rng, n, m, entries):
    B = rng.standard_normal((n, n))
    W = B @ B.T
    p = rng.integers(0, n, entries)
    q = rng.integers(0, n, entries)
    return W, rng.integers(0, m, entries), np.minimum(p, q), np.maximum(p, q), rng.standard_normal(entries), m


def eval_case(rng, terms, dim, points):
    return rng.integers(0, 7, (terms, dim)), rng.standard_normal(terms), rng.uniform(-3, 3, (points, dim))


SOLVE = ("import time, sys; sys.path.insert(0, 'tests')\n"
         "from conftest import case1_system\n"
         "from sosreach.drift import synthesize_drift\n"
         "s = case1_system(); best = 1e9\n"
         "for _ in range(4):\n"
         "    t = time.perf_counter(); synthesize_drift(s, 6); best = min(best, time.perf_counter() - t)\n"
         "print(best)\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        sys.exit("numba is unavailable or disabled; nothing to compare")
    rng = np.random.default_rng(0)
    rows = []
    for n, m, e in [(10, 50, 200), (28, 200, 1500), (45, 400, 4000)]:
        args_ = schur_case(rng, n, m, e)
        a = best_of(lambda: _kernels.schur_block(*args_, backend="numpy"), args.repeat)
        b = best_of(lambda: _kernels.schur_block(*args_, backend="numba"), args.repeat)
        rows.append((f"schur_block n={n} m={m} entries={e}", a, b))
    for t, d, pts in [(28, 2, 10_201), (84, 4, 100_000), (210, 4, 100_000)]:
        args_ = eval_case(rng, t, d, pts)
        a = best_of(lambda: _kernels.poly_eval(*args_, backend="numpy"), args.repeat)
        b = best_of(lambda: _kernels.poly_eval(*args_, backend="numba"), args.repeat)
        rows.append((f"poly_eval terms={t} dim={d} points={pts}", a, b))
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    solve = []
    for flag in ("1", ""):
        env = dict(os.environ, SOSREACH_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", SOLVE], env=env, cwd=root, capture_output=True, text=True,
                             check=True)
        solve.append(float(out.stdout.strip()))
    rows.append(("case 1 drift solve, degree 6", *solve))
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy [s]':>10}  {'numba [s]':>10}  {'speedup':>8}")
    for name, a, b in rows:
        print(f"{name:<{width}}  {a:10.4f}  {b:10.4f}  {a / b:8.1f}x")


if __name__ == "__main__":
    main()
