"""Closed-loop rollout throughput: numba kernel versus the numpy fallback.

    python3 benchmarks/bench_rollout.py [--batches 1 55 275 2750 10000]

Both kernels run on identical random quadrotor scenarios; the script checks
that they agree before timing.
"""
import argparse
import time

import numpy as np

from sipgains import _accel, kernels, zoo


def scenario_batch(spec, B, rng):
    m = spec.model
    T = spec.T
    return (
        rng.uniform(-0.1, 0.1, (B, m.n_x)),
        rng.uniform([0.9, 0.001], [1.1, 0.0015], (B, m.n_rho_f)),
        np.zeros((B, m.n_rho_h)),
        np.zeros((B, T, m.n_w)),
        rng.uniform(-0.1, 0.1, (B, T + 1, m.n_v)),
        spec.U0,
        rng.uniform(-1.5, 1.5, (B, spec.policy.lags, m.n_u, m.n_y)),
        np.full((B, spec.N, m.n_u), 4.905),
    )


def per_call(fn, min_seconds=0.5):
    fn()
    n, t0 = 0, time.perf_counter()
    while time.perf_counter() - t0 < min_seconds:
        fn()
        n += 1
    return (time.perf_counter() - t0) / n


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batches", type=int, nargs="+", default=[1, 55, 275, 2750, 10000])
    args = ap.parse_args()
    spec = zoo.quadrotor_spec("two_step")
    m = spec.model
    if not _accel.HAVE_NUMBA or m.numba_kernel() is None:
        print("numba unavailable; only the numpy kernel can run")
        return
    rng = np.random.default_rng(0)
    print(f"{'batch':>7} {'numpy us/rollout':>17} {'numba us/rollout':>17} {'speedup':>8}")
    for B in args.batches:
        arrays = scenario_batch(spec, B, rng)
        a = kernels.closed_loop(m, *arrays, use_numba=False)
        b = kernels.closed_loop(m, *arrays, use_numba=True)
        err = max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
        assert err < 1e-9, err
        t_np = per_call(lambda: kernels.closed_loop(m, *arrays, use_numba=False))
        t_nb = per_call(lambda: kernels.closed_loop(m, *arrays, use_numba=True))
        print(f"{B:>7} {1e6 * t_np / B:>17.2f} {1e6 * t_nb / B:>17.2f} {t_np / t_nb:>8.2f}")


if __name__ == "__main__":
    main()
