"""Compiled kernels vs the numpy fallback on training-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 20]

Each kernel runs on identical inputs under both backends; the table lists
the best wall time of ``--repeat`` calls and the speed-up. Outputs are
compared too, so a parity break shows up here as well as in the tests.
"""
import argparse
import timeit

import numpy as np

from modabric.compute import _fallback

try:
    from modabric.compute import _kernels as compiled
except ImportError:
    compiled = None


def cases(rng):
    # attribute model: batch 64, 38 conv positions, 128 filters
    conv = rng.normal(size=(64, 38, 128))
    _, arg = _fallback.max_over_time(conv)
    up = rng.normal(size=(64, 128))
    # embedding gradients: 64 x 40 token rows into a 20k x 64 table
    rows = rng.integers(0, 20_000, size=64 * 40)
    src = rng.normal(size=(rows.size, 64))
    # negatives: batch 1024, z=100 from a 5k pool, ~40 exclusions each
    pool = np.arange(5_000, dtype=np.int64)
    excl = [np.unique(rng.integers(0, 5_000, size=40)) for _ in range(1024)]
    indptr = np.concatenate([[0], np.cumsum([e.size for e in excl])]).astype(np.int64)
    flat = np.concatenate(excl).astype(np.int64)
    uniforms = rng.random((1024, 100))

    def scatter(mod):
        dst = np.zeros((20_000, 64))
        mod.scatter_add_rows(dst, rows, src)
        return dst

    return {
        "max_over_time (64x38x128)": lambda mod: mod.max_over_time(conv),
        "max_over_time_backward": lambda mod: mod.max_over_time_backward(up, arg, conv.shape[1]),
        "scatter_add_rows (2560x64)": scatter,
        "sample_negatives (1024 x z=100)": lambda mod: mod.sample_negatives_batch(pool, indptr, flat, uniforms, 5_000),
    }


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if compiled is None:
        print("compiled kernels are not built; only the fallback can run (pip install -e . builds them)")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34}{'python ms':>11}{'cython ms':>11}{'speed-up':>10}  parity")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        if compiled is None:
            print(f"{name:<34}{t_py:>11.3f}{'-':>11}{'-':>10}  -")
            continue
        t_cy = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=args.repeat)) * 1e3
        ok = same(fn(_fallback), fn(compiled))
        print(f"{name:<34}{t_py:>11.3f}{t_cy:>11.3f}{t_py / t_cy:>9.1f}x  {'ok' if ok else 'MISMATCH'}")


if __name__ == "__main__":
    main()
