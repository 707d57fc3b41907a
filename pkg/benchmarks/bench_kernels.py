"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one row per kernel with the best wall time of each backend and the speedup.
"""
import argparse
import timeit

import numpy as np

from vpclt import _fallback

try:
    from vpclt import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    x = rng.random((1500, 2))
    dist = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    order = np.argsort(-dist.max(axis=1), kind="stable").astype(np.int64)
    radii = np.geomspace(1.0, 1e-2, 40)
    paths = np.cumsum(rng.standard_normal((2000, 512)), axis=1) / np.sqrt(512)
    spans = paths.max(axis=1) - paths.min(axis=1)
    values = rng.standard_normal((2000, 256))
    lambdas = np.geomspace(1e-3, 1e3, 61)
    return {
        "greedy_net_counts": (dist, order, radii),
        "increment_ratio_max": (paths, spans),
        "row_exp_sums": (values, lambdas[:20], float(values.max())),
        "bridge_survival": (paths, 1.0, 1.0 / 512),
    }


def best_time(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _kernels is None:
        print("compiled core not built; only the fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}")
    for name, call_args in cases(rng).items():
        slow = best_time(getattr(_fallback, name), call_args, args.repeat)
        if _kernels is None:
            print(f"{name:<22}{slow:>12.4f}{'-':>12}{'-':>10}")
            continue
        fast = best_time(getattr(_kernels, name), call_args, args.repeat)
        print(f"{name:<22}{slow:>12.4f}{fast:>12.4f}{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()
