"""Time the numba kernels against their numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--points 4096] [--repeats 5]

Numba timings exclude the first (compiling) call. Both paths must agree on
every input; the script checks that before timing.
"""
import argparse
import time

import numpy as np

from hierpart import kernels


def best_of(fn, args, repeats):
    fn(*args)  # warm-up, triggers compilation
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(m, k, width, num_samples, rng):
    pts = rng.normal(size=(m, 3))
    idx = kernels.NUMPY["knn"](pts, k)
    w = rng.dirichlet(np.ones(k + 1), size=m)
    h = rng.normal(size=(m, width))
    cdf = np.cumsum(rng.dirichlet(np.ones(8), size=m), axis=1)
    u = rng.random((num_samples, m))
    cost = -rng.integers(0, 100, size=(8, 8)).astype(float)
    return {
        "knn": (pts, k),
        "gather": (h, idx, w),
        "scatter": (h, idx, w, m),
        "draw": (cdf, u),
        "assign": (cost,),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--points", type=int, default=4096, help="points per cloud (default: 4096)")
    p.add_argument("--k-nn", type=int, default=16, help="neighbours (default: 16)")
    p.add_argument("--width", type=int, default=128, help="feature width for gather/scatter (default: 128)")
    p.add_argument("--samples", type=int, default=100, help="draws per point (default: 100)")
    p.add_argument("--repeats", type=int, default=5, help="timed repeats, best kept (default: 5)")
    args = p.parse_args(argv)

    if kernels.NUMBA is None:
        print("numba unavailable (not installed or HIERPART_DISABLE_NUMBA set); timing numpy only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<8} {'numpy [ms]':>11} {'numba [ms]':>11} {'speedup':>8}")
    for name, a in cases(args.points, args.k_nn, args.width, args.samples, rng).items():
        t_np = best_of(kernels.NUMPY[name], a, args.repeats)
        if kernels.NUMBA is None:
            print(f"{name:<8} {t_np * 1e3:11.3f} {'-':>11} {'-':>8}")
            continue
        out_np, out_nb = kernels.NUMPY[name](*a), kernels.NUMBA[name](*a)
        if name == "assign":
            same = a[0][np.arange(8), out_np].sum() == a[0][np.arange(8), out_nb].sum()
        else:
            same = np.allclose(out_np, out_nb, rtol=1e-12, atol=1e-12)
        if not same:
            raise SystemExit(f"{name}: numba and numpy results differ")
        t_nb = best_of(kernels.NUMBA[name], a, args.repeats)
        print(f"{name:<8} {t_np * 1e3:11.3f} {t_nb * 1e3:11.3f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
