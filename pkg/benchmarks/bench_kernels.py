"""Compare the compiled hot loops against the numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best wall time of each backend, the speedup
and the max absolute difference between the two results.
"""
import argparse
import time

import numpy as np

from sqglab import _accel


def best_of(fn, repeat):
    t = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        t = min(t, time.perf_counter() - t0)
    return t, out


def cases(rng):
    n = 160
    F = rng.standard_normal((n, n))
    sample = np.zeros((n, n), np.uint8)
    sample[20:-20, 20:-20] = 1
    offs = np.array([(di, dj) for di in range(-8, 9, 2) for dj in range(-8, 9, 2) if di or dj], np.int64)
    w = 1.0 / np.hypot(offs[:, 0], offs[:, 1])
    yield ("holder_sup",
           lambda: _accel.holder_sup(F, sample, offs, w)[0],
           lambda: _accel.holder_sup_py(F, sample.astype(bool), offs, w)[0])
    so = np.array([(di, dj) for di in range(-12, 13) for dj in range(-12, 13) if di or dj], np.int64)
    sw = 1.0 / np.hypot(so[:, 0], so[:, 1]) ** 3
    yield ("singular_sum",
           lambda: _accel.singular_sum(F, so, sw, sample),
           lambda: _accel.singular_sum_py(F, so, sw, sample.astype(bool)))
    m = 64
    u = rng.standard_normal((m, m))
    b11 = 1.0 + 0.1 * rng.random((m, m))
    b22 = 1.0 + 0.1 * rng.random((m, m))
    b12 = 0.05 * rng.random((m, m))
    cdet = np.ones((m, m))
    smp = np.ones((m, m), bool)
    yield ("frozen_sum",
           lambda: _accel.frozen_sum(u, b11, b12, b22, cdet, smp, 10),
           lambda: _accel.frozen_sum_py(u, b11, b12, b22, cdet, smp, 10))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"compiled backend available: {_accel.BACKEND == 'cython'}")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'compiled [s]':>14}{'python [s]':>14}{'speedup':>10}{'max diff':>12}")
    for name, fast, slow in cases(rng):
        tf, a = best_of(fast, args.repeat)
        ts, b = best_of(slow, args.repeat)
        diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
        print(f"{name:<14}{tf:>14.4f}{ts:>14.4f}{ts / tf:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
