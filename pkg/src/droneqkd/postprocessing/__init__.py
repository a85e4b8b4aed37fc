"""Error correction, verification and privacy amplification."""
from .hashing import poly_hash, verify
from .keyblock import BlockStatus, KeyBlock
from .keyfile import read_key, write_key
from .ldpc import DecodeFailure, LdpcCode, build_code, check_bits_for, decode, syndrome
from .toeplitz import toeplitz_extract

__all__ = [
    "BlockStatus", "DecodeFailure", "KeyBlock", "LdpcCode", "build_code", "check_bits_for",
    "decode", "poly_hash", "read_key", "syndrome", "toeplitz_extract", "verify", "write_key",
]
