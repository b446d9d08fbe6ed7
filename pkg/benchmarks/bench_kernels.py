"""Time the numba and numpy implementations of each batch kernel.

    python3 benchmarks/bench_kernels.py --rows 1000000 --repeat 5

Results are checked for equality before timing. The first numba call (JIT
compile or cache load) is excluded.
"""

import argparse
import timeit

import numpy as np

from duplexkit import kernels


def cases(rows, rng):
    levels = np.array([8, 5, 5, 5], dtype=np.int64)
    z = rng.uniform(-1.2, 1.2, (rows, 4))
    codes = kernels.fsq_quantize_np(z, levels)
    idx, _ = kernels.codes_to_index_np(codes, levels)
    n_frames = rows
    starts = np.sort(rng.integers(0, n_frames, rows // 20))
    stops = starts + rng.integers(1, 60, starts.shape[0])
    tokens = rng.integers(0, 4037, (rows, 5)).astype(np.int32)
    tokens[:, 0] = rng.integers(0, 32003, rows)
    return {
        "fsq_quantize": (z, levels),
        "fsq_dequantize": (codes, levels),
        "codes_to_index": (codes, levels),
        "index_to_codes": (idx, levels),
        "fill_ranges": (n_frames, starts, stops),
        "to_global": (tokens, 32003, 32000, 4037),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if not kernels.HAVE_NUMBA:
        print("numba unavailable or disabled (DUPLEXKIT_NO_NUMBA); timing numpy only")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<16}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, call_args in cases(args.rows, rng).items():
        f_np = getattr(kernels, f"{name}_np")
        t_np = min(timeit.repeat(lambda: f_np(*call_args), number=1, repeat=args.repeat)) * 1e3
        if kernels.HAVE_NUMBA:
            f_nb = getattr(kernels, f"{name}_nb")
            if not same(f_np(*call_args), f_nb(*call_args)):
                raise SystemExit(f"{name}: backends disagree")
            t_nb = min(timeit.repeat(lambda: f_nb(*call_args), number=1, repeat=args.repeat)) * 1e3
            print(f"{name:<16}{t_np:>12.2f}{t_nb:>12.2f}{t_np / t_nb:>9.1f}x")
        else:
            print(f"{name:<16}{t_np:>12.2f}{'-':>12}{'-':>10}")


if __name__ == "__main__":
    main()
