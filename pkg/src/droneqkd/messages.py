"""Payload codecs for each frame type.

Integer lists travel as zigzag delta varints (gate indices are nearly sorted)
and bit lists are packed little-endian within each byte.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import ClassVar, Dict, Type

import numpy as np

from .framing import FrameError, FrameType


class PayloadError(FrameError):
    pass


class Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise PayloadError("payload truncated")
        out = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return out

    def varint(self) -> int:
        shift = result = 0
        while True:
            b = self.take(1)[0]
            result |= (b & 0x7F) << shift
            if not b & 0x80:
                return result
            shift += 7
            if shift > 70:
                raise PayloadError("varint too long")

    def int_list(self) -> np.ndarray:
        n = self.varint()
        deltas = [_unzigzag(self.varint()) for _ in range(n)]
        return np.cumsum(np.array(deltas, dtype=np.int64)) if n else np.zeros(0, np.int64)

    def bits(self) -> np.ndarray:
        n = self.varint()
        raw = np.frombuffer(self.take((n + 7) // 8), dtype=np.uint8)
        return np.unpackbits(raw, count=n, bitorder="little")

    def done(self) -> None:
        if self.pos != len(self.data):
            raise PayloadError(f"{len(self.data) - self.pos} unexpected trailing payload bytes")


def varint(value: int) -> bytes:
    if value < 0:
        raise ValueError("varint must be non-negative")
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _zigzag(v: int) -> int:
    return (v << 1) ^ (v >> 63)


def _unzigzag(v: int) -> int:
    return (v >> 1) ^ -(v & 1)


def int_list(values) -> bytes:
    values = np.asarray(values, dtype=np.int64)
    deltas = np.diff(values, prepend=0) if values.size else values
    return varint(values.size) + b"".join(varint(_zigzag(int(d))) for d in deltas)


def bit_list(bits) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8)
    return varint(bits.size) + np.packbits(bits, bitorder="little").tobytes()


class Message:
    frame_type: ClassVar[FrameType]
    registry: ClassVar[Dict[FrameType, Type["Message"]]] = {}

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        Message.registry[cls.frame_type] = cls

    def encode(self) -> bytes:
        raise NotImplementedError

    @classmethod
    def parse(cls, r: Reader) -> "Message":
        raise NotImplementedError

    @classmethod
    def decode(cls, payload: bytes) -> "Message":
        r = Reader(payload)
        msg = cls.parse(r)
        r.done()
        return msg


def decode_payload(frame_type: FrameType, payload: bytes) -> Message:
    return Message.registry[frame_type].decode(payload)


@dataclass(frozen=True, eq=False)
class BasisAnnounce(Message):
    """Receiver -> transmitter: detected gates and measurement bases (never bits)."""

    frame_type: ClassVar[FrameType] = FrameType.BASIS_ANNOUNCE
    window: int
    gates: np.ndarray
    bases: np.ndarray

    def encode(self):
        return varint(self.window) + int_list(self.gates) + bit_list(self.bases)

    @classmethod
    def parse(cls, r):
        return cls(r.varint(), r.int_list(), r.bits())


@dataclass(frozen=True, eq=False)
class MatchSet(Message):
    """Per announced gate: bits 0-1 intensity class, bit 2 set when bases match."""

    frame_type: ClassVar[FrameType] = FrameType.MATCH_SET
    window: int
    codes: np.ndarray
    sent_counts: tuple

    def encode(self):
        return (varint(self.window) + b"".join(varint(int(c)) for c in self.sent_counts)
                + varint(self.codes.size) + np.asarray(self.codes, np.uint8).tobytes())

    @classmethod
    def parse(cls, r):
        window = r.varint()
        sent = tuple(r.varint() for _ in range(3))
        n = r.varint()
        return cls(window, np.frombuffer(r.take(n), dtype=np.uint8).copy(), sent)


@dataclass(frozen=True)
class SampleSeed(Message):
    frame_type: ClassVar[FrameType] = FrameType.SAMPLE_SEED
    window: int
    seed: bytes

    def encode(self):
        if len(self.seed) != 32:
            raise PayloadError("sample seed must be 32 bytes")
        return varint(self.window) + self.seed

    @classmethod
    def parse(cls, r):
        return cls(r.varint(), r.take(32))


@dataclass(frozen=True, eq=False)
class SampleBits(Message):
    """Disclosed bits at the listed gates (signal sample and all matched decoys)."""

    frame_type: ClassVar[FrameType] = FrameType.SAMPLE_BITS
    window: int
    gates: np.ndarray
    bits: np.ndarray

    def encode(self):
        return varint(self.window) + int_list(self.gates) + bit_list(self.bits)

    @classmethod
    def parse(cls, r):
        return cls(r.varint(), r.int_list(), r.bits())


@dataclass(frozen=True)
class TallyReport(Message):
    """``(sent, detected, compared, errors)`` for signal, decoy and vacuum."""

    frame_type: ClassVar[FrameType] = FrameType.TALLY_REPORT
    window: int
    rows: tuple

    def encode(self):
        return varint(self.window) + b"".join(varint(int(v)) for row in self.rows for v in row)

    @classmethod
    def parse(cls, r):
        window = r.varint()
        return cls(window, tuple(tuple(r.varint() for _ in range(4)) for _ in range(3)))


@dataclass(frozen=True, eq=False)
class EcSyndrome(Message):
    frame_type: ClassVar[FrameType] = FrameType.EC_SYNDROME
    block_id: int
    n: int
    qber_prior: float
    code_seed: bytes
    syndrome: np.ndarray

    def encode(self):
        return (varint(self.block_id) + varint(self.n) + struct.pack("<d", self.qber_prior)
                + self.code_seed + bit_list(self.syndrome))

    @classmethod
    def parse(cls, r):
        block_id, n = r.varint(), r.varint()
        (q,) = struct.unpack("<d", r.take(8))
        return cls(block_id, n, q, r.take(32), r.bits())


@dataclass(frozen=True)
class EcHash(Message):
    """Verification exchange. Status: 0 decode failed, 1 hash attached, 2 match, 3 mismatch."""

    frame_type: ClassVar[FrameType] = FrameType.EC_HASH
    block_id: int
    status: int
    hash_key: bytes = b""
    digest: bytes = b""

    FAILED: ClassVar[int] = 0
    HASH: ClassVar[int] = 1
    MATCH: ClassVar[int] = 2
    MISMATCH: ClassVar[int] = 3

    def encode(self):
        out = varint(self.block_id) + bytes([self.status])
        if self.status == self.HASH:
            if len(self.hash_key) != 8 or len(self.digest) != 8:
                raise PayloadError("hash key and digest must be 8 bytes each")
            out += self.hash_key + self.digest
        return out

    @classmethod
    def parse(cls, r):
        block_id = r.varint()
        status = r.take(1)[0]
        if status == cls.HASH:
            return cls(block_id, status, r.take(8), r.take(8))
        if status not in (cls.FAILED, cls.MATCH, cls.MISMATCH):
            raise PayloadError(f"unknown verification status {status}")
        return cls(block_id, status)


@dataclass(frozen=True)
class PaSeed(Message):
    frame_type: ClassVar[FrameType] = FrameType.PA_SEED
    block_id: int
    output_len: int
    seed: bytes

    def encode(self):
        return varint(self.block_id) + varint(self.output_len) + self.seed

    @classmethod
    def parse(cls, r):
        return cls(r.varint(), r.varint(), r.take(32))


@dataclass(frozen=True)
class Abort(Message):
    frame_type: ClassVar[FrameType] = FrameType.ABORT
    reason: str

    def encode(self):
        return self.reason.encode("utf-8")

    @classmethod
    def parse(cls, r):
        return cls(r.take(len(r.data) - r.pos).decode("utf-8", "replace"))
