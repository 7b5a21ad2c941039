#!/usr/bin/env python3
"""Benchmark the classifier's hot kernels: numba @njit vs pure numpy.

The two loops measured here dominate classification and EM training:
per-component Gaussian log-densities over (N, K, D), and the
responsibility-weighted moment accumulation of the M step.

Usage: python3 benchmarks/bench_kernels.py [--frames N] [--repeats R]
Set RHYME_MIMIC_NO_NUMBA=1 to check which backend the package itself picks.
"""
import argparse
import time

import numpy as np

from rhyme_mimic import kernels


def time_fn(fn, *args, repeats=7):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frames", type=int, default=20000, help="samples per call")
    parser.add_argument("--components", type=int, default=8)
    parser.add_argument("--dims", type=int, default=16)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    x = rng.normal(0, 2, (args.frames, args.dims))
    means = rng.normal(0, 2, (args.components, args.dims))
    variances = rng.uniform(0.1, 3.0, (args.components, args.dims))
    resp = rng.uniform(0, 1, (args.frames, args.components))
    resp /= resp.sum(axis=1, keepdims=True)

    impls = kernels.implementations()
    print(f"active backend: {kernels.backend()}")
    print(f"shape: N={args.frames} K={args.components} D={args.dims}, best of {args.repeats}\n")

    if "numba" in impls:
        # warm the JIT outside the timed region
        impls["numba"]["component_log_densities_diag"](x[:8], means, variances)
        impls["numba"]["weighted_moments_diag"](x[:8], resp[:8])

    rows = []
    for name in ("component_log_densities_diag", "weighted_moments_diag"):
        timings = {}
        for backend, fns in impls.items():
            fn_args = (x, means, variances) if name == "component_log_densities_diag" else (x, resp)
            timings[backend] = time_fn(fns[name], *fn_args, repeats=args.repeats)
        rows.append((name, timings))

    for name, timings in rows:
        line = f"{name:34s}"
        for backend in sorted(timings):
            line += f"  {backend}: {timings[backend] * 1000:8.2f} ms"
        if len(timings) == 2:
            line += f"  speedup: {timings['numpy'] / timings['numba']:.2f}x"
        print(line)

    if "numba" in impls:
        a = impls["numpy"]["component_log_densities_diag"](x, means, variances)
        b = impls["numba"]["component_log_densities_diag"](x, means, variances)
        print(f"\nmax |numpy - numba| on log densities: {np.max(np.abs(a - b)):.3e}")


if __name__ == "__main__":
    main()
