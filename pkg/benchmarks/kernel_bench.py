#!/usr/bin/env python3
"""Benchmark the numba-jitted kernels against the pure-numpy fallbacks.

Runs each kernel in-process through both implementations (the numpy path is
always importable; the numba path is skipped when numba is missing or
STAGESUM_NO_NUMBA=1 is set) and reports per-call times and speedups.

Usage:  python3 benchmarks/kernel_bench.py [--repeats N]
"""

import argparse
import time

import numpy as np

from stagesum import kernels


def timeit(fn, repeats):
    fn()  # warm-up (triggers JIT compilation on the numba path)
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_lcs(repeats):
    rng = np.random.default_rng(0)
    a = rng.integers(0, 50, 400).astype(np.int64)
    b = rng.integers(0, 50, 400).astype(np.int64)
    cases = {"numpy": lambda: kernels._lcs_len_np(a, b)}
    if kernels.USE_NUMBA:
        cases["numba"] = lambda: kernels._lcs_len_nb(a, b)
    return "lcs_length[400x400]", {k: timeit(f, repeats) for k, f in cases.items()}


def bench_scatter(repeats):
    rng = np.random.default_rng(1)
    att = rng.random((16, 512))
    ids = rng.integers(-1, 8000, 512).astype(np.int64)
    cases = {"numpy": lambda: kernels._scatter_copy_forward_np(att, ids, 8000)}
    if kernels.USE_NUMBA:
        cases["numba"] = lambda: kernels._scatter_copy_forward_nb(att, ids, 8000)
    return "scatter_copy[16x512->8000]", {k: timeit(f, repeats) for k, f in cases.items()}


def bench_scatter_backward(repeats):
    rng = np.random.default_rng(2)
    d_out = rng.random((16, 8000))
    ids = rng.integers(-1, 8000, 512).astype(np.int64)
    cases = {"numpy": lambda: kernels._scatter_copy_backward_np(d_out, ids, 512)}
    if kernels.USE_NUMBA:
        cases["numba"] = lambda: kernels._scatter_copy_backward_nb(d_out, ids, 512)
    return "scatter_copy_backward[16x8000]", {k: timeit(f, repeats) for k, f in cases.items()}


def bench_adam(repeats):
    rng = np.random.default_rng(3)
    shape = (512, 512)

    def run(fn):
        param = rng.standard_normal(shape)
        grad = rng.standard_normal(shape)
        m = np.zeros(shape)
        v = np.zeros(shape)
        return lambda: fn(param, grad, m, v, 1e-3, 0.9, 0.999, 1e-8, 1)

    cases = {"numpy": run(kernels._adam_update_np)}
    if kernels.USE_NUMBA:
        cases["numba"] = run(kernels._adam_update_nb)
    return "adam_update[512x512]", {k: timeit(f, repeats) for k, f in cases.items()}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    if not kernels.USE_NUMBA:
        print("note: numba path disabled (STAGESUM_NO_NUMBA=1 or numba missing);"
              " reporting numpy only\n")
    print(f"{'kernel':<34}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for bench in (bench_lcs, bench_scatter, bench_scatter_backward, bench_adam):
        name, times = bench(args.repeats)
        np_t = times["numpy"]
        if "numba" in times:
            nb_t = times["numba"]
            print(f"{name:<34}{np_t * 1e3:>10.3f}ms{nb_t * 1e3:>10.3f}ms"
                  f"{np_t / nb_t:>9.1f}x")
        else:
            print(f"{name:<34}{np_t * 1e3:>10.3f}ms{'-':>12}{'-':>10}")


if __name__ == "__main__":
    main()
