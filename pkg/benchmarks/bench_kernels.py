"""Time the numba and pure-numpy paths of each hot kernel.

    python benchmarks/bench_kernels.py [--points 200000] [--repeat 5]

The first numba call (compilation or cache load) is excluded from timing.
"""

import argparse
import timeit

import numpy as np

from qss_sim import _kernels


def _grid(points, rng):
    z = rng.uniform(size=points)
    r = 2 * np.sqrt(z * (1 - z)) * rng.uniform(size=points)
    th = rng.uniform(0, 2 * np.pi, size=points)
    return r * np.cos(th), r * np.sin(th), z


def _replay_inputs(points, rng, parties=4):
    start = rng.integers(0, 16, size=points)
    a = rng.integers(0, 4, size=(parties, points))
    b = rng.integers(0, 2, size=(parties, points))
    return start, a, b


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    cases = {
        "overlap_sum_grid": (_kernels.overlap_sum_grid, _grid(args.points, rng)),
        "replay_labels": (_kernels.replay_labels, _replay_inputs(args.points, rng)),
    }
    if _kernels.numba is None:
        print("numba is not installed; only the numpy path is timed")
    print(f"{'kernel':<18} {'path':<6} {'best ms':>10}")
    for name, (fn, inputs) in cases.items():
        ref = fn(*inputs, use_numba=False)
        for path, flag in (("numpy", False), ("numba", True)):
            if flag and _kernels.numba is None:
                continue
            out = fn(*inputs, use_numba=flag)  # warm-up / JIT
            assert np.allclose(out, ref), f"{name}: paths disagree"
            best = min(timeit.repeat(lambda: fn(*inputs, use_numba=flag), number=1, repeat=args.repeat))
            print(f"{name:<18} {path:<6} {best * 1e3:>10.2f}")


if __name__ == "__main__":
    main()
