#!/usr/bin/env python3
"""Benchmark the CRF kernels: numba @njit path vs pure-numpy fallback.

Both implementations are imported directly, so the NGCMOTION_NUMBA flag
does not matter here; the first jit call is warmed up outside the timed
region so compile time is excluded.

    python benchmarks/bench_kernels.py --tau 200 --labels 32 --reps 50
"""

import argparse
import time

import numpy as np

from ngcmotion import _kernels


def timeit(fn, args, reps):
    best = float("inf")
    for _ in range(reps):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tau", type=int, default=200)
    ap.add_argument("--labels", type=int, default=32)
    ap.add_argument("--reps", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    unary = rng.normal(size=(args.tau, args.labels))
    trans = rng.normal(size=(args.labels, args.labels))

    pairs = [
        ("log_partition", _kernels.crf_log_partition_jit, _kernels.crf_log_partition_numpy),
        ("marginals", _kernels.crf_marginals_jit, _kernels.crf_marginals_numpy),
        ("viterbi", _kernels.viterbi_jit, _kernels.viterbi_numpy),
    ]

    print(f"tau={args.tau} labels={args.labels} reps={args.reps} (best-of times)")
    print(f"{'kernel':<16}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for name, jit_fn, np_fn in pairs:
        jit_fn(unary, trans)  # warm-up/compile
        # agreement sanity before timing
        a = jit_fn(unary, trans)[0]
        b = np_fn(unary, trans)[0]
        assert np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-10), name
        t_jit = timeit(jit_fn, (unary, trans), args.reps)
        t_np = timeit(np_fn, (unary, trans), args.reps)
        print(f"{name:<16}{t_jit * 1e3:>10.3f}ms{t_np * 1e3:>10.3f}ms{t_np / t_jit:>9.1f}x")


if __name__ == "__main__":
    main()
