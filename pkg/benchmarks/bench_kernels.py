#!/usr/bin/env python3
"""Benchmark the numba kernels against their numpy/python fallbacks.

Each kernel is timed on a representative pipeline-sized workload after a
warm-up call (so numba's compilation cost is not charged to the loop).
Run: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from coparse import kernels


def timeit(fn, repeats):
    fn()  # warm-up (also triggers JIT compilation)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_cell_histograms(rng):
    cy, cx = 16, 12
    mag = np.ascontiguousarray(rng.uniform(0, 10, size=(cy * 8, cx * 8)))
    obin = np.ascontiguousarray(rng.integers(0, 9, size=(cy * 8, cx * 8)))
    return {
        "numpy": lambda: kernels.cell_histograms_np(mag, obin, cy, cx),
        "numba": (lambda: kernels.cell_histograms_nb(mag, obin, cy, cx))
        if kernels.HAVE_NUMBA else None,
    }


def bench_score_windows(rng):
    blocks = np.ascontiguousarray(rng.standard_normal((30, 24, 36)))
    wvec = rng.standard_normal(7 * 5 * 36)
    return {
        "numpy": lambda: kernels.score_windows_np(blocks, 7, 5, wvec, 1),
        "numba": (lambda: kernels.score_windows_nb(blocks, 7, 5, wvec, 1))
        if kernels.HAVE_NUMBA else None,
    }


def bench_dinic(rng):
    n = 400
    frm, to, cap = [], [], []

    def arc(u, v, c):
        frm.extend([u, v])
        to.extend([v, u])
        cap.extend([float(c), 0.0])

    for _ in range(6 * n):
        u, v = rng.integers(0, n, size=2)
        if u != v:
            arc(int(u), int(v), int(rng.integers(1, 30)))
    frm_arr = np.asarray(frm, dtype=np.int64)
    order = np.argsort(frm_arr, kind="stable").astype(np.int64)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr[1:], frm_arr, 1)
    ptr = np.cumsum(ptr)
    to_arr = np.asarray(to, dtype=np.int64)
    cap_arr = np.asarray(cap)
    return {
        "python": lambda: kernels.dinic_py(n, 0, n - 1, ptr, order, to_arr, cap_arr.copy()),
        "numba": (lambda: kernels.dinic_nb(n, 0, n - 1, ptr, order, to_arr, cap_arr.copy()))
        if kernels.HAVE_NUMBA else None,
    }


def bench_multicut_enumerate(rng):
    n = 10
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    eu = np.array([p[0] for p in pairs], dtype=np.int64)
    ev = np.array([p[1] for p in pairs], dtype=np.int64)
    ew = rng.uniform(-0.5, 0.5, size=len(pairs))
    mask_ptr = np.array([0, 4], dtype=np.int64)
    mask_ids = np.arange(4, dtype=np.int64)
    mask_h = np.array([0.3])
    return {
        "python": lambda: kernels.multicut_enumerate_py(
            n, eu, ev, ew, mask_ptr, mask_ids, mask_h),
        "numba": (lambda: kernels.multicut_enumerate_nb(
            n, eu, ev, ew, mask_ptr, mask_ids, mask_h))
        if kernels.HAVE_NUMBA else None,
    }


BENCHES = {
    "cell_histograms (16x12 cells)": bench_cell_histograms,
    "score_windows (30x24 blocks, 7x5 template)": bench_score_windows,
    "dinic max-flow (400 nodes, ~2400 arcs)": bench_dinic,
    "partition scan (10 nodes, 115975 partitions)": bench_multicut_enumerate,
}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba available: {kernels.HAVE_NUMBA}, "
          f"dispatch: {'numba' if kernels.NUMBA_ENABLED else 'fallback'}")
    print(f"{'kernel':<46} {'fallback':>12} {'numba':>12} {'speedup':>9}")
    for name, builder in BENCHES.items():
        variants = builder(rng)
        fallback_key = "numpy" if "numpy" in variants else "python"
        t_fb = timeit(variants[fallback_key], args.repeats)
        if variants["numba"] is None:
            print(f"{name:<46} {t_fb * 1e3:>10.2f}ms {'-':>12} {'-':>9}")
            continue
        t_nb = timeit(variants["numba"], args.repeats)
        print(f"{name:<46} {t_fb * 1e3:>10.2f}ms {t_nb * 1e3:>10.2f}ms "
              f"{t_fb / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
