#!/usr/bin/env python3
"""Benchmark of the numba kernels against the pure-numpy fallback.

Times each hot kernel at pipeline-like sizes and prints a table of
per-call wall times plus the speedup.  Usage:

    python3 benchmarks/bench_backends.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from plume.kernels import get_backend


def timeit(fn, args, repeat):
    fn(*args)                       # warmup / JIT compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def build_cases(rng):
    cases = []
    # RBF evaluation on a fitting-sized grid
    grid = np.arange(0.0, 360.0, 2.0)
    xs = rng.uniform(0, 360, 1)
    aa = rng.uniform(0.08, 0.2, 1)
    cc = rng.uniform(0.5, 3, 1)
    field = rng.uniform(0, 1, grid.size)
    cases.append(("rbf_eval (180 pts)", "rbf_eval",
                  (grid, xs, aa, cc, 360.0, 3)))
    cases.append(("rbf_misfit_grads", "rbf_misfit_grads",
                  (grid, field, xs, aa, cc, 360.0, 3)))
    # weighted KDE at campaign-like sample counts
    samples = rng.normal(-14, 2, 2000)
    weights = rng.uniform(0, 1, 2000)
    weights /= weights.sum()
    wind_grid = np.linspace(-25, -5, 1000)
    cases.append(("kde_eval (2000x1000)", "kde_eval",
                  (samples, weights, wind_grid, 0.5)))
    # flow-map training loss + gradient on a campaign-sized dataset
    ntraj, ndays, nw = 35, 10, 4
    x = np.sort(rng.uniform(0, 300, (ntraj, ndays)), axis=1)[:, ::-1]
    a = np.sort(rng.uniform(0.08, 0.2, (ntraj, ndays)), axis=1)[:, ::-1]
    c = np.sort(rng.uniform(0.5, 4, (ntraj, ndays)), axis=1)[:, ::-1]
    R = np.ascontiguousarray(np.stack([x, a, c], axis=2))
    S = R.copy()
    S[..., 2] *= 0.3
    S = np.ascontiguousarray(S)
    W = np.ascontiguousarray(rng.standard_normal((ntraj, ndays, nw)))
    ms0 = np.ascontiguousarray(0.05 * R[:, 0, 2] / R[:, 0, 1])
    sizes = np.array([7, 3], dtype=np.int64)
    theta = rng.standard_normal(24) * 0.05
    mu = np.zeros(7)
    sd = np.ones(7)
    scale = np.ones(3)
    mask = np.ones(3, dtype=np.int8)
    cases.append(("lookahead_loss_grad (35 traj)", "fm_lookahead_loss_grad",
                  (R, S, W, ms0, theta, sizes, mu, sd, scale, 1.0, 1e-3, 3,
                   1.5, np.ones(3), np.ones(3), mask, True)))
    # inversion-sized batch rollout
    z0 = np.array([150.0, 0.15, 2.0])
    winds = np.ascontiguousarray(rng.standard_normal((35, 9, nw)))
    cases.append(("batch_rollout (35x9)", "fm_batch_rollout",
                  (z0, winds, theta, sizes, mu, sd, scale, 1.0, 1e-3, mask)))
    return cases


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    nb = get_backend("numba")
    npb = get_backend("numpy")
    cases = build_cases(rng)
    print(f"{'kernel':34s} {'numba':>12s} {'numpy':>12s} {'speedup':>9s}")
    for label, name, call_args in cases:
        t_nb = timeit(getattr(nb, name), call_args, args.repeat)
        t_np = timeit(getattr(npb, name), call_args, args.repeat)
        print(f"{label:34s} {t_nb * 1e3:10.3f}ms {t_np * 1e3:10.3f}ms "
              f"{t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
