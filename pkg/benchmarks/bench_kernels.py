"""Time the numba kernels against their numpy twins.

Run with ``python3 benchmarks/bench_kernels.py``. Inputs are sized like one
EM E-step on the synthetic benchmark, one fold-in and one candidate scan.
"""

import argparse
import time

import numpy as np

from activecf.kernels import _numba, _numpy


def _inputs(rng):
    k, m, u, t = 4, 50, 200, 6000
    estep = (rng.normal(size=t), rng.integers(0, u, t), rng.integers(0, m, t),
             np.log(rng.dirichlet(np.ones(k), u)), rng.normal(size=(k, m)), rng.uniform(0.1, 1.5, (k, m)), 1.0)
    fold = (rng.uniform(0, 1, (8, k)), np.full(k, 1.0 / k), 1e-10, 10000)
    alpha = rng.uniform(1, 4, k)
    batch = (rng.uniform(0, 1, (35, k)), alpha, alpha / alpha.sum(), 1e-8, 500)
    return {"em_estep": estep, "fold_in_fixed_point": fold, "fast_update_batch": batch}


def _best_of(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeat", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    inputs = _inputs(np.random.default_rng(args.seed))
    print(f"{'kernel':<22}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}")
    for name, call_args in inputs.items():
        fast = getattr(_numba, name)
        fast(*call_args)  # compile outside the timed loop
        t_np = _best_of(getattr(_numpy, name), call_args, args.repeat)
        t_nb = _best_of(fast, call_args, args.repeat)
        print(f"{name:<22}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
