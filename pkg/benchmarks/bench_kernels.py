"""Time one BCD sweep with the numba kernel against the numpy fallback.

    python benchmarks/bench_kernels.py [--m 400] [--blocks 80] [--width 3] [--Q 3]
"""

import argparse
import time

import numpy as np

from hdfts import _kernels


def bench(fn, X, Y, offsets, lams, lips, repeats):
    best = np.inf
    for _ in range(repeats):
        B = np.zeros((X.shape[1], Y.shape[1]))
        R = Y.copy()
        t0 = time.perf_counter()
        fn(X, R, B, offsets, lams, lips, 1.0 / X.shape[0])
        best = min(best, time.perf_counter() - t0)
    return best, B


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=400)
    ap.add_argument("--blocks", type=int, default=80)
    ap.add_argument("--width", type=int, default=3)
    ap.add_argument("--Q", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=20)
    a = ap.parse_args()
    rng = np.random.default_rng(0)
    X = rng.standard_normal((a.m, a.blocks * a.width))
    Y = rng.standard_normal((a.m, a.Q))
    offsets = np.arange(0, a.blocks * a.width + 1, a.width, dtype=np.int64)
    lams = np.full(a.blocks, 0.05)
    lips = np.ones(a.blocks)
    t_np, B_np = bench(_kernels.bcd_sweep_numpy, X, Y, offsets, lams, lips, a.repeats)
    print(f"problem: m={a.m}, blocks={a.blocks}, width={a.width}, Q={a.Q}")
    print(f"numpy  sweep: {t_np * 1e3:8.3f} ms")
    if _kernels.bcd_sweep_numba is None:
        print("numba  sweep: unavailable (HDFTS_DISABLE_NUMBA set or numba missing)")
        return
    _kernels.bcd_sweep_numba(X, Y.copy(), np.zeros((X.shape[1], a.Q)), offsets, lams, lips, 1.0 / a.m)  # compile
    t_nb, B_nb = bench(_kernels.bcd_sweep_numba, X, Y, offsets, lams, lips, a.repeats)
    print(f"numba  sweep: {t_nb * 1e3:8.3f} ms  (speedup x{t_np / t_nb:.2f})")
    print(f"max |B_numpy - B_numba| = {np.abs(B_np - B_nb).max():.2e}")


if __name__ == "__main__":
    main()
