"""Final key files: ``QKDK`` magic, u32 little-endian bit length, packed bits."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"QKDK"


class KeyFileError(ValueError):
    pass


def key_bytes(bits) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8)
    return MAGIC + struct.pack("<I", bits.size) + np.packbits(bits, bitorder="little").tobytes()


def write_key(path, bits) -> Path:
    path = Path(path)
    path.write_bytes(key_bytes(bits))
    return path


def read_key(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != MAGIC:
        raise KeyFileError(f"{path}: not a key file")
    (n,) = struct.unpack_from("<I", data, 4)
    body = np.frombuffer(data[8:], dtype=np.uint8)
    if body.size != (n + 7) // 8:
        raise KeyFileError(f"{path}: expected {(n + 7) // 8} key bytes, found {body.size}")
    return np.unpackbits(body, count=n, bitorder="little")
