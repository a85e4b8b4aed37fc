"""Length-prefixed, CRC-protected frames for the classical channel.

Wire layout (little-endian)::

    u32 payload_length | u8 type_tag | 8B session_id | u32 sequence | payload | u32 crc32

The CRC covers every preceding byte of the frame.
"""
from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass

MAX_PAYLOAD = 1 << 24
_HEAD = struct.Struct("<IB8sI")
_CRC = struct.Struct("<I")
HEADER_SIZE = _HEAD.size
OVERHEAD = HEADER_SIZE + _CRC.size


class FrameError(ValueError):
    pass


class IncompleteFrame(FrameError):
    pass


class CorruptFrame(FrameError):
    pass


class UnknownFrameType(FrameError):
    pass


class FrameType(enum.IntEnum):
    BASIS_ANNOUNCE = 0x01
    MATCH_SET = 0x02
    SAMPLE_SEED = 0x03
    SAMPLE_BITS = 0x04
    TALLY_REPORT = 0x05
    EC_SYNDROME = 0x06
    EC_HASH = 0x07
    PA_SEED = 0x08
    ABORT = 0x09


@dataclass(frozen=True)
class Frame:
    type_tag: FrameType
    session_id: bytes
    sequence: int
    payload: bytes = b""

    def __post_init__(self):
        if len(self.session_id) != 8:
            raise FrameError("session_id must be 8 bytes")
        if not 0 <= self.sequence < 1 << 32:
            raise FrameError("sequence out of range")
        if len(self.payload) > MAX_PAYLOAD:
            raise FrameError("payload exceeds 2**24 bytes")


def encode_frame(frame: Frame) -> bytes:
    body = _HEAD.pack(len(frame.payload), int(frame.type_tag), frame.session_id,
                      frame.sequence) + frame.payload
    return body + _CRC.pack(zlib.crc32(body))


def frame_length(prefix: bytes) -> int:
    """Total frame size implied by the first four bytes."""
    if len(prefix) < 4:
        raise IncompleteFrame("need 4 bytes for the length prefix")
    (length,) = struct.unpack_from("<I", prefix)
    if length > MAX_PAYLOAD:
        raise CorruptFrame(f"declared payload of {length} bytes exceeds the limit")
    return length + OVERHEAD


def decode_frame(data: bytes) -> Frame:
    """Decode exactly one frame from ``data``."""
    total = frame_length(data)
    if len(data) < total:
        raise IncompleteFrame(f"have {len(data)} of {total} bytes")
    if len(data) > total:
        raise FrameError(f"{len(data) - total} trailing bytes after frame")
    body, (crc,) = data[:-4], _CRC.unpack(data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptFrame("CRC mismatch")
    length, tag, session_id, seq = _HEAD.unpack_from(body)
    try:
        ftype = FrameType(tag)
    except ValueError:
        raise UnknownFrameType(f"unknown type tag 0x{tag:02x}") from None
    return Frame(ftype, session_id, seq, bytes(body[HEADER_SIZE:]))


def read_frame(sock) -> Frame:
    """Read one frame from a connected stream socket."""
    prefix = _recv_exact(sock, 4)
    rest = _recv_exact(sock, frame_length(prefix) - 4)
    return decode_frame(prefix + rest)


def _recv_exact(sock, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            raise IncompleteFrame("connection closed mid-frame")
        buf += chunk
    return bytes(buf)
