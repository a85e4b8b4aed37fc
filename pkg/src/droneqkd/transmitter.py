"""Airborne decoy-state source.

One laser fires per gate: the intensity class is drawn from
``(p_signal, p_decoy, p_vacuum)``, basis and bit are uniform for non-vacuum
gates, and the photon number is Poisson with the class mean. A SYNC pulse is
emitted on every gate.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .core import IntensityClass, ProtocolParams

NO_VALUE = -1  # basis/bit marker for vacuum gates
DEFAULT_SOURCE_JITTER = 10e-12


class EmptyBlockError(ValueError):
    pass


@dataclass(frozen=True)
class PulseRecord:
    gate_index: int
    intensity: IntensityClass
    basis: Optional[int]
    bit: Optional[int]
    photon_count: int
    emit_time: float


@dataclass(frozen=True)
class SyncPulse:
    gate_index: int
    emit_time: float


@dataclass(frozen=True, eq=False)
class PulseBlock:
    """Struct-of-arrays view of consecutive gates ``start .. start+len-1``."""

    start: int
    period: float
    intensity: np.ndarray  # uint8, IntensityClass values
    basis: np.ndarray  # int8, NO_VALUE for vacuum
    bit: np.ndarray  # int8, NO_VALUE for vacuum
    photons: np.ndarray  # int64
    jitter: np.ndarray  # seconds added to the nominal gate time

    def __len__(self) -> int:
        return self.intensity.size

    @property
    def gate_index(self) -> np.ndarray:
        return np.arange(self.start, self.start + len(self), dtype=np.int64)

    @property
    def emit_time(self) -> np.ndarray:
        return self.gate_index * self.period + self.jitter

    def __getitem__(self, i: int) -> PulseRecord:
        if not -len(self) <= i < len(self):
            raise IndexError(i)
        i %= len(self)
        vac = self.basis[i] == NO_VALUE
        return PulseRecord(
            gate_index=self.start + i,
            intensity=IntensityClass(int(self.intensity[i])),
            basis=None if vac else int(self.basis[i]),
            bit=None if vac else int(self.bit[i]),
            photon_count=int(self.photons[i]),
            emit_time=float((self.start + i) * self.period + self.jitter[i]),
        )

    def records(self) -> Iterator[PulseRecord]:
        for i in range(len(self)):
            yield self[i]

    def state_counts(self) -> np.ndarray:
        """Counts of non-vacuum H, V, D, A pulses."""
        keep = self.basis != NO_VALUE
        return np.bincount(2 * self.basis[keep] + self.bit[keep], minlength=4)

    def to_bytes(self) -> bytes:
        return b"".join(
            a.tobytes() for a in (self.intensity, self.basis, self.bit, self.photons, self.jitter)
        )

    def dump(self, path) -> None:
        """Write ``gate,intensity,basis,bit,photons`` rows; vacuum basis/bit left empty."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gate", "intensity", "basis", "bit", "photons"])
            for r in self.records():
                w.writerow([
                    r.gate_index,
                    r.intensity.name.lower(),
                    "" if r.basis is None else r.basis,
                    "" if r.bit is None else r.bit,
                    r.photon_count,
                ])


@dataclass(frozen=True, eq=False)
class SyncBlock:
    start: int
    period: float
    jitter: np.ndarray

    def __len__(self) -> int:
        return self.jitter.size

    @property
    def gate_index(self) -> np.ndarray:
        return np.arange(self.start, self.start + len(self), dtype=np.int64)

    @property
    def emit_time(self) -> np.ndarray:
        return self.gate_index * self.period + self.jitter

    def __getitem__(self, i: int) -> SyncPulse:
        i %= len(self)
        return SyncPulse(self.start + i, float((self.start + i) * self.period + self.jitter[i]))


def generate_block(gen: np.random.Generator, params: ProtocolParams, n_gates: int,
                   start_index: int = 0, jitter_sigma: float = DEFAULT_SOURCE_JITTER):
    """Draw ``n_gates`` consecutive pulses and their SYNC companions."""
    if n_gates < 1:
        raise EmptyBlockError("a block needs at least one gate")
    cdf = np.cumsum(params.probabilities())
    cdf[-1] = 1.0
    intensity = np.searchsorted(cdf, gen.random(n_gates), side="right").astype(np.uint8)
    np.minimum(intensity, np.uint8(IntensityClass.VACUUM), out=intensity)
    basis_bit = gen.integers(0, 2, size=(2, n_gates), dtype=np.int8)
    mus = np.array([params.mu_signal, params.mu_decoy, params.mu_vacuum])
    photons = gen.poisson(mus[intensity])
    jitter = gen.normal(0.0, jitter_sigma, n_gates) if jitter_sigma > 0 else np.zeros(n_gates)
    sync_jitter = gen.normal(0.0, jitter_sigma, n_gates) if jitter_sigma > 0 else np.zeros(n_gates)

    vacuum = intensity == IntensityClass.VACUUM
    basis, bit = basis_bit
    basis[vacuum] = NO_VALUE
    bit[vacuum] = NO_VALUE
    photons[vacuum] = 0
    period = params.period
    return (
        PulseBlock(start_index, period, intensity, basis, bit, photons, jitter),
        SyncBlock(start_index, period, sync_jitter),
    )


def next_pulse(gen: np.random.Generator, params: ProtocolParams, gate_index: int,
               jitter_sigma: float = DEFAULT_SOURCE_JITTER) -> PulseRecord:
    pulses, _ = generate_block(gen, params, 1, start_index=gate_index, jitter_sigma=jitter_sigma)
    return pulses[0]
