"""Named, splittable, counter-based random streams.

Every consumer asks for a stream by ``(seed, name, *index)``. The stream is a
Philox4x64 generator keyed through ``SeedSequence`` so that streams with
different names or indices are statistically independent and a given triple
always reproduces the same draws.
"""
from __future__ import annotations

import zlib
from typing import Union

import numpy as np

Seed = Union[int, bytes]


def _entropy(seed: Seed) -> int:
    if isinstance(seed, (bytes, bytearray)):
        return int.from_bytes(bytes(seed), "little")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return int(seed)


def stream(seed: Seed, name: str, *index: int) -> np.random.Generator:
    """Independent generator for the component ``name`` (and optional indices)."""
    key = (zlib.crc32(name.encode()),) + tuple(int(i) for i in index)
    ss = np.random.SeedSequence(entropy=_entropy(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def random_bits(seed: Seed, name: str, count: int) -> np.ndarray:
    """``count`` independent uniform bits as a uint8 array."""
    return stream(seed, name).integers(0, 2, size=count, dtype=np.uint8)
