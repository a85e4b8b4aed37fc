"""Drone-to-ground free-space channel.

Each photon survives independently with the instantaneous transmittance
``eta(t) = 10**(-loss/10) * c(t) / mean(c)`` where ``c(t)`` is the product of
the drone and ground fibre-coupling series, so pointing jitter modulates the
link around its calibrated average loss. Survivors flip to the orthogonal
polarization with probability ``1 / (1 + extinction_ratio)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import LinkBudget, db_to_transmittance
from .tracking import PointingSeries
from .transmitter import NO_VALUE, PulseBlock, PulseRecord

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0

SIGNAL_PATH = 0
BACKGROUND = 1


def compose_budget(budget: LinkBudget) -> float:
    return budget.total_db


@dataclass(frozen=True, eq=False)
class ChannelState:
    budget: LinkBudget = LinkBudget()
    extinction_ratio: float = 30.0
    background_rate: float = 2000.0  # counts/s per detector, before gating
    timing_jitter_sigma: float = 40e-12
    drone: Optional[PointingSeries] = None
    ground: Optional[PointingSeries] = None

    def __post_init__(self):
        if not self.extinction_ratio >= 1:
            raise ValueError("extinction_ratio must be >= 1")
        if self.background_rate < 0:
            raise ValueError("background_rate must be >= 0")
        if self.timing_jitter_sigma < 0:
            raise ValueError("timing_jitter_sigma must be >= 0")
        object.__setattr__(self, "_coupling_mean", self._mean_coupling())

    @property
    def flip_probability(self) -> float:
        if np.isinf(self.extinction_ratio):
            return 0.0
        return 1.0 / (1.0 + self.extinction_ratio)

    @property
    def mean_transmittance(self) -> float:
        return db_to_transmittance(self.budget.effective_db)

    @property
    def propagation_delay(self) -> float:
        return self.budget.distance_m / SPEED_OF_LIGHT

    def _mean_coupling(self) -> float:
        series = [s for s in (self.drone, self.ground) if s is not None]
        if not series:
            return 1.0
        n = min(len(s) for s in series)
        prod = np.ones(n)
        for s in series:
            prod = prod * s.coupling[:n]
        mean = float(prod.mean())
        if mean <= 0:
            raise ValueError("tracking never achieved coupling")
        return mean

    def coupling(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        c = np.ones(t.shape)
        for s in (self.drone, self.ground):
            if s is not None:
                c = c * s.coupling_at(t)
        return c

    def transmittance(self, t) -> np.ndarray:
        eta = self.mean_transmittance * self.coupling(t) / self._coupling_mean
        over = eta > 1
        if np.any(over):
            log.warning("transmittance above 1 at %d instants; clipped", int(over.sum()))
            eta = np.minimum(eta, 1.0)
        return eta


@dataclass(frozen=True)
class ArrivalEvent:
    """Photons from one gate (or one background count) reaching the receiver.

    ``basis``/``bit`` are the prepared state; ``flipped_photons`` of the
    ``surviving_photons`` arrive in the orthogonal state.
    """

    gate_index: int
    arrival_time: float
    basis: int
    bit: int
    surviving_photons: int
    flipped_photons: int
    origin: int = SIGNAL_PATH


@dataclass(frozen=True, eq=False)
class ArrivalBlock:
    gate_index: np.ndarray
    arrival_time: np.ndarray
    basis: np.ndarray
    bit: np.ndarray
    surviving: np.ndarray
    flipped: np.ndarray
    origin: np.ndarray

    def __len__(self) -> int:
        return self.gate_index.size

    def __getitem__(self, i: int) -> ArrivalEvent:
        return ArrivalEvent(int(self.gate_index[i]), float(self.arrival_time[i]),
                            int(self.basis[i]), int(self.bit[i]), int(self.surviving[i]),
                            int(self.flipped[i]), int(self.origin[i]))

    @classmethod
    def empty(cls) -> "ArrivalBlock":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, np.zeros(0), z, z, z, z, z)

    @classmethod
    def concat(cls, blocks) -> "ArrivalBlock":
        blocks = [b for b in blocks if len(b)]
        if not blocks:
            return cls.empty()
        return cls(*(np.concatenate([getattr(b, f) for b in blocks])
                     for f in ("gate_index", "arrival_time", "basis", "bit", "surviving",
                               "flipped", "origin")))


def transmit_block(block: PulseBlock, channel: ChannelState,
                   gen: np.random.Generator) -> ArrivalBlock:
    """Propagate every pulse of ``block``; gates losing all photons are dropped."""
    idx = np.flatnonzero(block.photons > 0)
    gates = block.start + idx
    emit = gates * block.period + block.jitter[idx]
    eta = channel.transmittance(emit)
    surviving = gen.binomial(block.photons[idx], eta)
    keep = surviving > 0
    idx, gates, emit, surviving = idx[keep], gates[keep], emit[keep], surviving[keep]
    flipped = gen.binomial(surviving, channel.flip_probability)
    jitter = gen.normal(0.0, channel.timing_jitter_sigma, idx.size) \
        if channel.timing_jitter_sigma > 0 else np.zeros(idx.size)
    arrival = emit + channel.propagation_delay + jitter
    return ArrivalBlock(gates, arrival, block.basis[idx].astype(np.int64),
                        block.bit[idx].astype(np.int64), surviving, flipped,
                        np.full(idx.size, SIGNAL_PATH, dtype=np.int64))


def transmit(pulse: PulseRecord, channel: ChannelState,
             gen: np.random.Generator) -> Optional[ArrivalEvent]:
    period = 1.0
    start = pulse.gate_index
    jitter = pulse.emit_time - start * period
    block = PulseBlock(
        start, period,
        np.array([int(pulse.intensity)], dtype=np.uint8),
        np.array([NO_VALUE if pulse.basis is None else pulse.basis], dtype=np.int8),
        np.array([NO_VALUE if pulse.bit is None else pulse.bit], dtype=np.int8),
        np.array([pulse.photon_count], dtype=np.int64),
        np.array([jitter]),
    )
    out = transmit_block(block, channel, gen)
    return out[0] if len(out) else None


def background_events(gen: np.random.Generator, channel: ChannelState, t_start: float,
                      t_end: float, n_detectors: int = 4) -> ArrivalBlock:
    """Poisson background on each detector channel over ``[t_start, t_end)``."""
    if not t_end > t_start:
        raise ValueError("t_end must exceed t_start")
    counts = gen.poisson(channel.background_rate * (t_end - t_start), n_detectors)
    det = np.repeat(np.arange(n_detectors), counts)
    times = gen.uniform(t_start, t_end, det.size)
    order = np.argsort(times, kind="stable")
    det, times = det[order], times[order]
    ones = np.ones(det.size, dtype=np.int64)
    return ArrivalBlock(np.full(det.size, -1, dtype=np.int64), times, det // 2, det % 2,
                        ones, np.zeros(det.size, dtype=np.int64),
                        np.full(det.size, BACKGROUND, dtype=np.int64))
