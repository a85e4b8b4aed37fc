"""64-bit polynomial universal hash for key verification.

Bits are packed into 32-bit words ``w_1..w_L`` and hashed as
``sum(w_i * k^i) + L * k^(L+1) mod p`` with ``p = 2**64 - 59`` and a fresh key
``k``. Two distinct inputs collide with probability at most ``(L + 1) / p``.
"""
from __future__ import annotations

import numpy as np

PRIME = (1 << 64) - 59
DIGEST_BYTES = 8
LEAK_BITS = 64


def _words(bits) -> list:
    bits = np.asarray(bits, dtype=np.uint8)
    packed = np.packbits(bits, bitorder="little")
    pad = (-packed.size) % 4
    packed = np.concatenate([packed, np.zeros(pad, dtype=np.uint8)])
    return [int(w) for w in packed.view("<u4")]


def poly_hash(bits, key: bytes) -> bytes:
    if len(key) != 8:
        raise ValueError("hash key must be 8 bytes")
    k = int.from_bytes(key, "little") % PRIME
    acc = 0
    words = _words(bits)
    for w in reversed(words):
        acc = (acc + w) * k % PRIME
    acc = (acc + len(bits) * pow(k, len(words) + 1, PRIME)) % PRIME
    return acc.to_bytes(DIGEST_BYTES, "little")


def verify(bits_a, bits_b_hash: bytes, key: bytes) -> bool:
    """True when ``bits_a`` hashes to the other party's digest under ``key``."""
    return poly_hash(bits_a, key) == bits_b_hash
