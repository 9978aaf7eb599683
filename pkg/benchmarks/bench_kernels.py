"""Time the compiled and NumPy kernel backends on identical inputs.

Usage: python benchmarks/bench_kernels.py [--size N] [--repeat R]
"""

import argparse
import timeit

import numpy as np

from chaincert.kernels import available_backends, load_backend


def cases(n, rng):
    A = np.ascontiguousarray(rng.standard_normal((n, n)))
    labels = rng.integers(0, 9, size=n).astype(np.int64)
    scores = np.ascontiguousarray(np.abs(rng.standard_normal((8, n))))
    member = np.ascontiguousarray(rng.random((8, n)) < 0.2, dtype=np.uint8)
    w = rng.random(n * 16)
    return {
        "group_column_scores": lambda m: m.group_column_scores(A, labels, 8),
        "block_energy_sums": lambda m: m.block_energy_sums(scores, member),
        "suffix_sums": lambda m: m.suffix_sums(w),
        "top_select": lambda m: m.top_select(w, n // 4),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = {name: load_backend(name) for name in available_backends()}
    print(f"{'kernel':<22}" + "".join(f"{b:>14}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases(args.size, rng).items():
        times = {b: min(timeit.repeat(lambda: fn(m), number=1, repeat=args.repeat)) for b, m in backends.items()}
        ref = [fn(m) for m in backends.values()]
        for r in ref[1:]:
            a, b = (ref[0], r) if not isinstance(r, tuple) else (ref[0][0], r[0])
            assert np.allclose(a, b), name
        speed = times.get("python", np.nan) / times.get("cython", np.nan)
        print(f"{name:<22}" + "".join(f"{times[b] * 1e3:>12.3f}ms" for b in backends) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
