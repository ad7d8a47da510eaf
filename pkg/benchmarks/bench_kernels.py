#!/usr/bin/env python3
"""Time the numba kernels against their numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--json out.json]
"""

import argparse
import json
import time

import numpy as np

from mxdefer.kernels import _numba, _numpy
from mxdefer.kernels.codes import COMP_LOG, CSTND_HINGE, SUM_EXP, SUM_RHO


def best_of(fn, repeats):
    fn()  # warm-up (also triggers compilation)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    for code, name in [(COMP_LOG, "comp_log"), (SUM_EXP, "sum_exp"), (CSTND_HINGE, "cstnd_hinge")]:
        for B, K in [(32, 5), (4096, 8)]:
            S = rng.normal(size=(B, K))
            if code == CSTND_HINGE:
                S -= S.mean(axis=1, keepdims=True)
            W = rng.random((B, K))
            yield (f"loss_grad {name} B={B} K={K}",
                   lambda mod, S=S, W=W, code=code: mod.weighted_loss_grad(code, 0.7, 1.0, S, W))
    for code, name in [(COMP_LOG, "comp_log"), (SUM_RHO, "sum_rho")]:
        K = 6
        w = rng.random(K)
        starts = rng.normal(size=(20, K))
        yield (f"minimize {name} K={K} starts=20",
               lambda mod, w=w, s=starts, code=code: mod.minimize_weighted(
                   code, 0.7, 1.0, w, s, 5.0, False, 2000, 0.1, 1e-9))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    results = []
    print(f"{'case':45s} {'numpy':>12s} {'numba':>12s} {'speedup':>8s}")
    for name, fn in cases(rng):
        a = fn(_numpy)
        b = fn(_numba)
        agree = all(np.allclose(x, y, rtol=1e-9, atol=1e-12) for x, y in zip(a[:2], b[:2]))
        t_np = best_of(lambda: fn(_numpy), args.repeats)
        t_nb = best_of(lambda: fn(_numba), args.repeats)
        results.append(dict(case=name, numpy_s=t_np, numba_s=t_nb, speedup=t_np / t_nb, agree=agree))
        print(f"{name:45s} {t_np * 1e3:10.3f}ms {t_nb * 1e3:10.3f}ms {t_np / t_nb:7.1f}x"
              + ("" if agree else "  MISMATCH"))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
