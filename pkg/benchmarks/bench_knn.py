"""Benchmark the k-NN top-k selection kernel: numba @njit vs the pure-numpy
stable-argsort fallback (selected at call time via GAUG_DISABLE_NUMBA).

Both paths share the identical chunked float64 similarity matmul, so the
numbers isolate the selection step; the script also asserts the two indexes
are bit-identical before reporting.

Usage:
    python3 benchmarks/bench_knn.py [--sizes 500,2000,8000] [--dim 64]
                                    [--k 50] [--repeats 3] [--seed 0]
"""

import argparse
import os
import time

import numpy as np

from gaug.embeddings import EmbeddingStore
from gaug.knn import build_neighborhoods


def _time_path(store, k, repeats, disable_numba):
    old = os.environ.get("GAUG_DISABLE_NUMBA")
    os.environ["GAUG_DISABLE_NUMBA"] = "1" if disable_numba else ""
    try:
        index = build_neighborhoods(store, k)  # warmup (and JIT compile)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            build_neighborhoods(store, k)
            times.append(time.perf_counter() - t0)
    finally:
        if old is None:
            os.environ.pop("GAUG_DISABLE_NUMBA", None)
        else:
            os.environ["GAUG_DISABLE_NUMBA"] = old
    return index.neighbors, min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="500,2000,8000",
                        help="comma-separated dataset sizes N")
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--k", type=int, default=50)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{'N':>8} {'d':>4} {'k':>4} {'numba (s)':>10} {'numpy (s)':>10} "
          f"{'speedup':>8}")
    for n in (int(s) for s in args.sizes.split(",")):
        emb = rng.standard_normal((n, args.dim)).astype(np.float32)
        store = EmbeddingStore(emb)
        k = min(args.k, n)
        nb_numba, t_numba = _time_path(store, k, args.repeats, False)
        nb_numpy, t_numpy = _time_path(store, k, args.repeats, True)
        assert np.array_equal(nb_numba, nb_numpy), "paths disagree"
        print(f"{n:>8} {args.dim:>4} {k:>4} {t_numba:>10.4f} "
              f"{t_numpy:>10.4f} {t_numpy / t_numba:>7.2f}x")


if __name__ == "__main__":
    main()
