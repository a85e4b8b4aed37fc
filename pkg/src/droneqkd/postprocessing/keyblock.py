"""Per-block key state with forward-only status transitions."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class BlockStatus(enum.IntEnum):
    RAW = 0
    CORRECTED = 1
    VERIFIED = 2
    AMPLIFIED = 3
    DISCARDED = 4


class StatusError(RuntimeError):
    pass


@dataclass
class KeyBlock:
    block_id: int
    bits: np.ndarray
    gates: np.ndarray = field(repr=False, default=None)
    leak_bits_accounted: int = 0
    status: BlockStatus = BlockStatus.RAW
    reason: str = ""

    def advance(self, status: BlockStatus, bits=None) -> None:
        if self.status == BlockStatus.DISCARDED or status <= self.status:
            raise StatusError(f"block {self.block_id}: {self.status.name} -> {status.name}")
        self.status = status
        if bits is not None:
            self.bits = np.asarray(bits, dtype=np.uint8)

    def discard(self, reason: str) -> None:
        if self.status == BlockStatus.DISCARDED:
            raise StatusError(f"block {self.block_id} already discarded")
        self.status = BlockStatus.DISCARDED
        self.reason = reason

    def disclose(self, n_bits: int) -> None:
        self.leak_bits_accounted += int(n_bits)
