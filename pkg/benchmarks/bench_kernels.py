"""Time the grid-search kernel on both backends.

    python benchmarks/bench_kernels.py [--n 200] [--degree 5] [--resolution 41]
"""
import argparse
import timeit

import numpy as np

from aeg import kernels
from aeg.classifier import LinearClassifier
from aeg.data import make_two_moons
from aeg.features import FeatureMap
from aeg.generator import grid_offsets


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--degree", type=int, default=5)
    ap.add_argument("--resolution", type=int, default=41)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args()

    ds = make_two_moons(a.n, 0.1, seed=0)
    fm = FeatureMap(2, a.degree)
    f = LinearClassifier(fm, np.random.default_rng(0).standard_normal((1, fm.output_dim)))
    offs = grid_offsets(0.3, a.resolution)
    args = (ds.points, ds.labels, f.weights, fm.exponents, fm.include_bias, offs)

    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    times = {}
    for b in backends:
        kernels.grid_search(*args, backend=b)  # warm-up
        times[b] = min(timeit.repeat(lambda: kernels.grid_search(*args, backend=b),
                                     number=1, repeat=a.repeat))
        print(f"{b:>7}: {times[b] * 1e3:8.2f} ms  "
              f"({a.n} points, {fm.name}, {a.resolution}x{a.resolution} grid)")
    if len(times) == 2:
        same = np.array_equal(kernels.grid_search(*args, backend="python")[0],
                              kernels.grid_search(*args, backend="cython")[0])
        print(f"speedup: {times['python'] / times['cython']:.1f}x, identical argmax: {same}")
    else:
        print("compiled kernels not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
