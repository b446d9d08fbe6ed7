"""Array kernels for corpus-scale batches.

Each kernel has a vectorised numpy implementation and a numba ``@njit`` loop
implementation with identical results. The numba path is used when numba
imports and ``DUPLEXKIT_NO_NUMBA`` is unset (or "0"); the numpy path is
always available as ``<name>_np`` for testing and benchmarking.
"""

from __future__ import annotations

import os

import numpy as np

_disabled = os.environ.get("DUPLEXKIT_NO_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError("disabled by DUPLEXKIT_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------- numpy path


def fsq_quantize_np(z, levels):
    z = np.clip(np.asarray(z, dtype=np.float64), -1.0, 1.0)
    half = (levels.astype(np.float64) - 1.0) / 2.0
    return np.floor((z + 1.0) * half + 0.5).astype(np.int64)


def fsq_dequantize_np(codes, levels):
    return 2.0 * codes.astype(np.float64) / (levels.astype(np.float64) - 1.0) - 1.0


def codes_to_index_np(codes, levels):
    codes = np.asarray(codes, dtype=np.int64)
    bad = (codes < 0) | (codes >= levels)
    bad_rows = np.flatnonzero(bad.any(axis=1))
    if bad_rows.size:
        return np.zeros(codes.shape[0], dtype=np.int64), int(bad_rows[0])
    strides = np.concatenate(([1], np.cumprod(levels[:-1]))).astype(np.int64)
    return codes @ strides, -1


def index_to_codes_np(index, levels):
    index = np.asarray(index, dtype=np.int64)
    total = int(np.prod(levels))
    bad = np.flatnonzero((index < 0) | (index >= total))
    if bad.size:
        return np.zeros((index.shape[0], levels.shape[0]), dtype=np.int64), int(bad[0])
    strides = np.concatenate(([1], np.cumprod(levels[:-1]))).astype(np.int64)
    return (index[:, None] // strides[None, :]) % levels[None, :], -1


def fill_ranges_np(n, starts, stops):
    # difference array: +1 at start, -1 at stop
    delta = np.zeros(n + 1, dtype=np.int64)
    starts = np.clip(starts, 0, n)
    stops = np.clip(stops, 0, n)
    keep = stops > starts
    np.add.at(delta, starts[keep], 1)
    np.add.at(delta, stops[keep], -1)
    return np.cumsum(delta[:n]) > 0


def to_global_np(tokens, text_limit, text_vocab_size, codebook_size):
    tokens = np.asarray(tokens, dtype=np.int64)
    out = tokens.copy()
    text = tokens[:, 0]
    speech = tokens[:, 1:]
    bad = np.zeros(tokens.shape, dtype=bool)
    bad[:, 0] = (text < 0) | (text >= text_limit)
    bad[:, 1:] = (speech < 0) | (speech >= codebook_size)
    flat = np.flatnonzero(bad.ravel())
    if flat.size:
        return out, int(flat[0])
    offsets = text_vocab_size + codebook_size * np.arange(tokens.shape[1] - 1, dtype=np.int64)
    out[:, 1:] = speech + offsets[None, :]
    return out, -1


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def fsq_quantize_nb(z, levels):
        n, d = z.shape
        out = np.empty((n, d), dtype=np.int64)
        for i in range(n):
            for j in range(d):
                v = z[i, j]
                if v < -1.0:
                    v = -1.0
                elif v > 1.0:
                    v = 1.0
                out[i, j] = np.int64(np.floor((v + 1.0) * ((levels[j] - 1.0) / 2.0) + 0.5))
        return out

    @njit(cache=True)
    def fsq_dequantize_nb(codes, levels):
        n, d = codes.shape
        out = np.empty((n, d), dtype=np.float64)
        for i in range(n):
            for j in range(d):
                out[i, j] = 2.0 * codes[i, j] / (levels[j] - 1.0) - 1.0
        return out

    @njit(cache=True)
    def codes_to_index_nb(codes, levels):
        n, d = codes.shape
        out = np.zeros(n, dtype=np.int64)
        for i in range(n):
            acc = np.int64(0)
            for j in range(d - 1, -1, -1):
                c = codes[i, j]
                if c < 0 or c >= levels[j]:
                    return out, i
                acc = acc * levels[j] + c
            out[i] = acc
        return out, -1

    @njit(cache=True)
    def index_to_codes_nb(index, levels):
        n = index.shape[0]
        d = levels.shape[0]
        out = np.zeros((n, d), dtype=np.int64)
        total = np.int64(1)
        for j in range(d):
            total *= levels[j]
        for i in range(n):
            x = index[i]
            if x < 0 or x >= total:
                return out, i
            for j in range(d):
                out[i, j] = x % levels[j]
                x //= levels[j]
        return out, -1

    @njit(cache=True)
    def fill_ranges_nb(n, starts, stops):
        mask = np.zeros(n, dtype=np.bool_)
        for r in range(starts.shape[0]):
            lo = max(starts[r], 0)
            hi = min(stops[r], n)
            for k in range(lo, hi):
                mask[k] = True
        return mask

    @njit(cache=True)
    def to_global_nb(tokens, text_limit, text_vocab_size, codebook_size):
        n, c = tokens.shape
        out = np.empty((n, c), dtype=np.int64)
        for i in range(n):
            v = tokens[i, 0]
            if v < 0 or v >= text_limit:
                return out, i * c
            out[i, 0] = v
            for j in range(1, c):
                v = tokens[i, j]
                if v < 0 or v >= codebook_size:
                    return out, i * c + j
                out[i, j] = text_vocab_size + (j - 1) * codebook_size + v
        return out, -1


def _pick(name):
    return globals()[f"{name}_nb" if HAVE_NUMBA else f"{name}_np"]


def _levels(levels):
    return np.ascontiguousarray(levels, dtype=np.int64)


def fsq_quantize(z, levels):
    """Quantise rows of ``z`` (T x D) to FSQ level indices (round half up)."""
    z = np.ascontiguousarray(np.atleast_2d(z), dtype=np.float64)
    return _pick("fsq_quantize")(z, _levels(levels))


def fsq_dequantize(codes, levels):
    codes = np.ascontiguousarray(np.atleast_2d(codes), dtype=np.int64)
    return _pick("fsq_dequantize")(codes, _levels(levels))


def codes_to_index(codes, levels):
    """Mixed-radix flat index per row; returns ``(indices, first_bad_row)``."""
    codes = np.ascontiguousarray(np.atleast_2d(codes), dtype=np.int64)
    return _pick("codes_to_index")(codes, _levels(levels))


def index_to_codes(index, levels):
    index = np.ascontiguousarray(np.atleast_1d(index), dtype=np.int64)
    return _pick("index_to_codes")(index, _levels(levels))


def fill_ranges(n, starts, stops):
    """Boolean mask of length n, true on ``[starts[r], stops[r])`` for every r."""
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    stops = np.ascontiguousarray(stops, dtype=np.int64)
    return _pick("fill_ranges")(int(n), starts, stops)


def to_global(tokens, text_limit, text_vocab_size, codebook_size):
    """Map a channel-local token matrix to extended-vocabulary ids.

    Returns ``(ids, first_bad_flat_index)``.
    """
    tokens = np.ascontiguousarray(tokens, dtype=np.int64)
    return _pick("to_global")(tokens, int(text_limit), int(text_vocab_size), int(codebook_size))
