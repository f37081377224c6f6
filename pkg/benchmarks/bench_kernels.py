#!/usr/bin/env python3
"""Benchmark the numba and numpy kernel backends on realistic shapes.

The conv forward/backward over long token runs dominates training time, so
this is the comparison that decides which backend to select via the
CHATKPE_KERNELS environment variable.

Usage: python benchmarks/bench_kernels.py [--lengths 512,2400,8160] [--d 64]
       [--dtype float64|float32] [--repeats 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from chatkpe import kernels


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_length(length: int, d: int, d_g: int, k_max: int, dtype, repeats: int):
    rng = np.random.default_rng(0)
    run = rng.standard_normal((length, d)).astype(dtype)
    ks = [rng.standard_normal((n, d, d_g)).astype(dtype) for n in range(1, k_max + 1)]
    bs = [rng.standard_normal(d_g).astype(dtype) for _ in range(k_max)]
    w = rng.standard_normal(d_g).astype(dtype)
    flops_fwd = sum(2 * (length - n + 1) * n * d * d_g for n in range(1, k_max + 1))
    rows = []
    for backend in ("numba", "numpy"):
        if backend == "numba" and not kernels.HAVE_NUMBA:
            continue
        with kernels.use_backend(backend):
            reps = [kernels.conv_forward(run, k, b) for k, b in zip(ks, bs)]
            grads = [(r > 0).astype(dtype) for r in reps]
            # warm-up covers jit compilation
            kernels.conv_backward(run, ks[0], grads[0])

            def fwd():
                for k, b in zip(ks, bs):
                    kernels.conv_forward(run, k, b)

            def head():
                for r in reps:
                    kernels.head_project(r, w, 0.1)

            def bwd():
                for k, r, g in zip(ks, reps, grads):
                    kernels.conv_backward(run, k, g)

            t_fwd = time_call(fwd, repeats)
            t_head = time_call(head, repeats)
            t_bwd = time_call(bwd, repeats)
        rows.append((backend, t_fwd, t_head, t_bwd, flops_fwd / t_fwd / 1e9))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lengths", default="512,2400,8160")
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--d-g", type=int, default=0, help="0 means same as --d")
    ap.add_argument("--k-max", type=int, default=7)
    ap.add_argument("--dtype", choices=["float64", "float32"], default="float64")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    dtype = np.float64 if args.dtype == "float64" else np.float32
    d_g = args.d_g or args.d
    print(f"dtype={args.dtype} d={args.d} d_g={d_g} k_max={args.k_max} "
          f"(default backend: {kernels.active_backend()})")
    print(f"{'len':>6} {'backend':>8} {'fwd ms':>9} {'head ms':>9} {'bwd ms':>9} {'fwd GF/s':>9}")
    for length in (int(x) for x in args.lengths.split(",")):
        for backend, t_fwd, t_head, t_bwd, gfs in bench_length(
            length, args.d, d_g, args.k_max, dtype, args.repeats
        ):
            print(f"{length:>6} {backend:>8} {t_fwd*1e3:>9.2f} {t_head*1e3:>9.2f} "
                  f"{t_bwd*1e3:>9.2f} {gfs:>9.2f}")


if __name__ == "__main__":
    main()
