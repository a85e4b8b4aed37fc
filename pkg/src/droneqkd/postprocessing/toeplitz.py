"""Toeplitz-matrix privacy amplification over GF(2).

The ``l x n`` matrix has entries ``T[i, j] = s[i - j + n - 1]`` for a seed
sequence ``s`` of ``n + l - 1`` bits, so row ``i`` is the seed window
``s[i : i + n]`` reversed. The fast path computes the product as a full
integer convolution reduced mod 2.
"""
from __future__ import annotations

import numpy as np

from .. import rng as rngmod


def seed_bits(pa_seed: bytes, n: int, out_len: int) -> np.ndarray:
    if len(pa_seed) != 32:
        raise ValueError("privacy amplification seed must be 32 bytes")
    return rngmod.random_bits(pa_seed, "toeplitz", n + out_len - 1)


def toeplitz_matrix(diagonals: np.ndarray, n: int, out_len: int) -> np.ndarray:
    i = np.arange(out_len)[:, None]
    j = np.arange(n)[None, :]
    return diagonals[i - j + n - 1].astype(np.uint8)


def toeplitz_naive(diagonals, bits, out_len: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    T = toeplitz_matrix(np.asarray(diagonals, dtype=np.uint8), bits.size, out_len)
    return (T.astype(np.int64) @ bits.astype(np.int64) % 2).astype(np.uint8)


def toeplitz_multiply(diagonals, bits, out_len: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    n = bits.size
    diagonals = np.asarray(diagonals, dtype=np.uint8)
    if diagonals.size != n + out_len - 1:
        raise ValueError("need n + l - 1 diagonal bits")
    if out_len == 0:
        return np.zeros(0, dtype=np.uint8)
    # y[i] = sum_j s[i - j + n - 1] x[j] = (s * x)[i + n - 1]
    full = np.convolve(diagonals.astype(np.int64), bits.astype(np.int64))
    return (full[n - 1:n - 1 + out_len] % 2).astype(np.uint8)


def toeplitz_extract(pa_seed: bytes, input_bits, output_len: int) -> np.ndarray:
    bits = np.asarray(input_bits, dtype=np.uint8)
    if output_len > bits.size:
        raise ValueError(f"output length {output_len} exceeds input length {bits.size}")
    if output_len < 0:
        raise ValueError("output length must be >= 0")
    return toeplitz_multiply(seed_bits(pa_seed, bits.size, output_len), bits, output_len)
