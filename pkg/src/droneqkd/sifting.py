"""Basis reconciliation, population separation and the estimation sample.

The receiver announces ``(gate, basis)`` for every detected gate. The
transmitter answers with one code byte per announced gate (intensity class in
bits 0-1, basis match in bit 2) plus the number of pulses it sent per class.
Both parties then hold identical index sets, intensity labels and bases.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import rng as rngmod
from .core import IntensityClass
from .decoy import EstimationError, Tally

MATCH_FLAG = 0x04
CLASS_MASK = 0x03


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SiftedBlock:
    """One party's view of the basis-matched detections of a window.

    ``bits`` holds this party's bits; vacuum positions carry the receiver's
    click outcome (or -1 at the transmitter) and are never key material.
    """

    gates: np.ndarray
    bits: np.ndarray
    intensity: np.ndarray
    basis: np.ndarray

    def __len__(self) -> int:
        return int(self.gates.size)

    def positions(self, cls: IntensityClass) -> np.ndarray:
        return np.flatnonzero(self.intensity == cls)

    def at(self, positions) -> "SiftedBlock":
        return SiftedBlock(self.gates[positions], self.bits[positions],
                           self.intensity[positions], self.basis[positions])


def _check_announcement(gates: np.ndarray, start: int, n_gates: int) -> None:
    if gates.size != np.unique(gates).size:
        raise ProtocolError("duplicate gate index in basis announcement")
    if gates.size and (gates.min() < start or gates.max() >= start + n_gates):
        raise ProtocolError("announced gate was never sent")


def transmitter_match(pulses, gates, bases) -> np.ndarray:
    """Code bytes for an announcement, checked against the transmitter's record."""
    gates = np.asarray(gates, dtype=np.int64)
    bases = np.asarray(bases, dtype=np.int64)
    if gates.size != bases.size:
        raise ProtocolError("announcement has mismatched gate and basis counts")
    _check_announcement(gates, pulses.start, len(pulses))
    idx = gates - pulses.start
    cls = pulses.intensity[idx].astype(np.uint8)
    match = (pulses.basis[idx] == bases) | (cls == IntensityClass.VACUUM)
    return cls | np.where(match, MATCH_FLAG, 0).astype(np.uint8)


def sift(gates, bases, bits, codes) -> SiftedBlock:
    """Keep basis-matched gates given per-gate codes; ``bits`` is this party's view."""
    gates = np.asarray(gates, dtype=np.int64)
    codes = np.asarray(codes, dtype=np.uint8)
    if codes.size != gates.size:
        raise ProtocolError("match set length differs from announcement")
    if gates.size != np.unique(gates).size:
        raise ProtocolError("duplicate gate index in basis announcement")
    keep = (codes & MATCH_FLAG).astype(bool)
    return SiftedBlock(gates[keep], np.asarray(bits, dtype=np.int8)[keep],
                       (codes[keep] & CLASS_MASK).astype(np.uint8),
                       np.asarray(bases, dtype=np.int8)[keep])


def sift_transmitter(pulses, gates, bases):
    """Transmitter side: validate, build the code bytes and its sifted view."""
    codes = transmitter_match(pulses, gates, bases)
    idx = np.asarray(gates, dtype=np.int64) - pulses.start
    return codes, sift(gates, bases, pulses.bit[idx], codes)


def sample_split(block: SiftedBlock, fraction: float, shared_seed: bytes):
    """Split signal positions into a disclosed sample and the key remainder.

    Returns position arrays into ``block`` (both sorted). ``floor(fraction*n)``
    of the ``n`` signal positions are chosen uniformly from ``shared_seed``.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"sample fraction {fraction} outside (0, 1)")
    signal = block.positions(IntensityClass.SIGNAL)
    k = int(np.floor(fraction * signal.size))
    chosen = rngmod.stream(shared_seed, "sample").permutation(signal.size)[:k]
    mask = np.zeros(signal.size, dtype=bool)
    mask[chosen] = True
    return signal[mask], signal[~mask]


def disclosed_positions(block: SiftedBlock, sample: np.ndarray) -> np.ndarray:
    """Positions whose bits are compared openly: the signal sample and all decoys."""
    return np.sort(np.concatenate([sample, block.positions(IntensityClass.DECOY)]))


def tally(block: SiftedBlock, sent_counts, detected_counts, sample: np.ndarray,
          own_bits: np.ndarray, peer_bits: np.ndarray) -> Dict[IntensityClass, Tally]:
    """Per-class counts; ``own_bits``/``peer_bits`` are at ``disclosed_positions``.

    ``detected_counts`` counts every announced gate of a class, matched or
    not, so gains are per sent pulse.
    """
    if any(int(s) == 0 for s in sent_counts):
        raise EstimationError("an intensity class has no pulses sent")
    disclosed = disclosed_positions(block, sample)
    errors = np.asarray(own_bits) != np.asarray(peer_bits)
    cls = block.intensity[disclosed]
    out = {}
    for c in IntensityClass:
        sel = cls == c
        compared = int(sel.sum()) if c != IntensityClass.VACUUM else 0
        out[c] = Tally(int(sent_counts[c]), int(detected_counts[c]), compared,
                       int(errors[sel].sum()) if compared else 0)
    return out


def detected_counts(codes) -> tuple:
    cls = np.asarray(codes, dtype=np.uint8) & CLASS_MASK
    return tuple(int(v) for v in np.bincount(cls, minlength=3)[:3])
