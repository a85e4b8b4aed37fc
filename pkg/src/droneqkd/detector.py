"""Ground receiver: passive basis choice, four single-photon detectors, TDC.

Photons pick a basis at a 50/50 beam splitter. In the matching basis they land
on the detector of their (possibly flipped) polarization; in the other basis
they land on either detector with equal probability. Clicks are time-tagged
in integer TDC ticks of the receiver's free-running clock.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from .channel import BACKGROUND, ArrivalBlock, ArrivalEvent

FLAG_MULTI_CLICK = 0x01
EVENT_DTYPE = np.dtype([("ticks", "<u8"), ("detector", "u1"), ("flags", "u1")])


class MissingClockError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float = 1.0  # folded into the detection loss term by default
    dark_rate: float = 100.0
    dead_time: float = 50e-9
    tdc_resolution: float = 1e-12

    def __post_init__(self):
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must lie in (0, 1]")
        if self.dark_rate < 0:
            raise ValueError("dark_rate must be >= 0")
        if self.dead_time < 0:
            raise ValueError("dead_time must be >= 0")
        if not self.tdc_resolution > 0:
            raise ValueError("tdc_resolution must be > 0")


@dataclass(frozen=True)
class ReceiverClock:
    """Receiver time base: ``t_rx = offset + t * (1 + drift)``."""

    offset: float = 3.7e-9
    drift: float = 2e-7

    def to_ticks(self, t, resolution: float) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.rint((self.offset + t * (1.0 + self.drift)) / resolution).astype(np.int64)


@dataclass(frozen=True)
class DetectionEvent:
    raw_timestamp: int
    detector_id: int
    multi_click: bool = False
    dark_origin: bool = False  # oracle-only


@dataclass(frozen=True, eq=False)
class DetectionBlock:
    """Sorted click stream. ``truth_*`` arrays are simulation bookkeeping only."""

    ticks: np.ndarray
    detector: np.ndarray
    flags: np.ndarray
    truth_gate: np.ndarray = field(repr=False, default=None)
    truth_dark: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        n = self.ticks.size
        if self.truth_gate is None:
            object.__setattr__(self, "truth_gate", np.full(n, -1, dtype=np.int64))
        if self.truth_dark is None:
            object.__setattr__(self, "truth_dark", np.zeros(n, dtype=bool))

    def __len__(self) -> int:
        return self.ticks.size

    def __getitem__(self, i) -> DetectionEvent:
        return DetectionEvent(int(self.ticks[i]), int(self.detector[i]),
                              bool(self.flags[i] & FLAG_MULTI_CLICK), bool(self.truth_dark[i]))

    def events(self) -> List[DetectionEvent]:
        return [self[i] for i in range(len(self))]

    def select(self, mask) -> "DetectionBlock":
        return DetectionBlock(self.ticks[mask], self.detector[mask], self.flags[mask],
                              self.truth_gate[mask], self.truth_dark[mask])

    def stripped(self) -> "DetectionBlock":
        """Copy without any oracle-only information."""
        return DetectionBlock(self.ticks.copy(), self.detector.copy(), self.flags.copy())

    @classmethod
    def empty(cls) -> "DetectionBlock":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.uint8), np.zeros(0, np.uint8))

    @classmethod
    def merge(cls, blocks) -> "DetectionBlock":
        """Stable, deterministic merge ordered by (timestamp, detector)."""
        blocks = [b for b in blocks if len(b)]
        if not blocks:
            return cls.empty()
        cat = {f: np.concatenate([getattr(b, f) for b in blocks])
               for f in ("ticks", "detector", "flags", "truth_gate", "truth_dark")}
        order = np.lexsort((cat["detector"], cat["ticks"]))
        return cls(**{k: v[order] for k, v in cat.items()})

    def to_bytes(self) -> bytes:
        rec = np.empty(len(self), dtype=EVENT_DTYPE)
        rec["ticks"] = self.ticks
        rec["detector"] = self.detector
        rec["flags"] = self.flags
        return rec.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "DetectionBlock":
        if len(data) % EVENT_DTYPE.itemsize:
            raise ValueError("truncated event stream")
        rec = np.frombuffer(data, dtype=EVENT_DTYPE)
        return cls(rec["ticks"].astype(np.int64), rec["detector"].copy(), rec["flags"].copy())

    def dump(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())


def _route_photons(arrivals: ArrivalBlock, cfg: DetectorConfig, gen: np.random.Generator):
    """Per-photon detector choice; returns (arrival index, detector) of clicks."""
    n_ph = arrivals.surviving
    owner = np.repeat(np.arange(len(arrivals)), n_ph)
    # position of each photon within its arrival; the first `flipped` ones are flipped
    first = np.repeat(np.cumsum(n_ph) - n_ph, n_ph)
    rank = np.arange(owner.size) - first
    flipped = rank < arrivals.flipped[owner]
    state_bit = arrivals.bit[owner] ^ flipped
    prep_basis = arrivals.basis[owner]

    meas_basis = gen.integers(0, 2, owner.size)
    random_bit = gen.integers(0, 2, owner.size)
    out_bit = np.where(meas_basis == prep_basis, state_bit, random_bit)
    det = 2 * meas_basis + out_bit
    fired = gen.random(owner.size) < cfg.efficiency if cfg.efficiency < 1 else \
        np.ones(owner.size, dtype=bool)

    background = arrivals.origin[owner] == BACKGROUND
    det = np.where(background, 2 * prep_basis + arrivals.bit[owner], det)
    fired |= background
    return owner[fired], det[fired]


def detect_block(arrivals: ArrivalBlock, cfg: DetectorConfig, gen: np.random.Generator,
                 clock: ReceiverClock) -> DetectionBlock:
    owner, det = _route_photons(arrivals, cfg, gen)
    # several photons on one detector from one arrival make a single click
    key = owner * 4 + det
    key, first_idx = np.unique(key, return_index=True)
    owner, det = owner[first_idx], det[first_idx]
    per_arrival = np.bincount(owner, minlength=len(arrivals))
    multi = per_arrival[owner] > 1
    ticks = clock.to_ticks(arrivals.arrival_time[owner], cfg.tdc_resolution)
    flags = np.where(multi, FLAG_MULTI_CLICK, 0).astype(np.uint8)
    truth_gate = arrivals.gate_index[owner]
    return DetectionBlock.merge([DetectionBlock(ticks, det.astype(np.uint8), flags, truth_gate,
                                                np.zeros(owner.size, dtype=bool))])


def detect(arrival: ArrivalEvent, cfg: DetectorConfig, gen: np.random.Generator,
           clock: ReceiverClock = ReceiverClock(0.0, 0.0)) -> List[DetectionEvent]:
    a = arrival
    block = ArrivalBlock(*(np.array([v]) for v in (a.gate_index, a.arrival_time, a.basis,
                                                   a.bit, a.surviving_photons,
                                                   a.flipped_photons, a.origin)))
    return detect_block(block, cfg, gen, clock).events()


def dark_counts(gen: np.random.Generator, cfg: DetectorConfig, t_start: float, t_end: float,
                clock: ReceiverClock = ReceiverClock(0.0, 0.0)) -> DetectionBlock:
    """Poisson dark clicks on each detector over ``[t_start, t_end)`` (transmitter time)."""
    if not t_end > t_start:
        raise ValueError("window must have positive length")
    counts = gen.poisson(cfg.dark_rate * (t_end - t_start), 4)
    det = np.repeat(np.arange(4, dtype=np.uint8), counts)
    times = gen.uniform(t_start, t_end, det.size)
    ticks = clock.to_ticks(times, cfg.tdc_resolution)
    return DetectionBlock.merge([DetectionBlock(
        ticks, det, np.zeros(det.size, np.uint8), np.full(det.size, -1, np.int64),
        np.ones(det.size, dtype=bool))])


def apply_dead_time(events: DetectionBlock, dead_time: float, resolution: float) -> DetectionBlock:
    """Non-paralyzable dead time per detector on a time-sorted stream."""
    if len(events) == 0 or dead_time <= 0:
        return events
    dead = int(round(dead_time / resolution))
    keep = np.ones(len(events), dtype=bool)
    for d in range(4):
        idx = np.flatnonzero(events.detector == d)
        if idx.size < 2:
            continue
        t = events.ticks[idx]
        close = np.flatnonzero(np.diff(t) < dead) + 1
        # only clicks close to their predecessor need the sequential rule
        local = np.ones(t.size, dtype=bool)
        last_kept = t[0]
        for j in close:
            if local[j - 1]:
                last_kept = t[j - 1]
            if t[j] - last_kept < dead:
                local[j] = False
        keep[idx] = local
    return events.select(keep)


def gate_filter(events: DetectionBlock, clock_model, gate_width: float,
                resolution: float = 1e-12):
    """Keep clicks within ``+-gate_width/2`` of a gate centre; returns (events, gates)."""
    if clock_model is None:
        raise MissingClockError("gate filtering needs a recovered clock model")
    from .timesync import assign_gates

    gates, residue = assign_gates(events.ticks * resolution, clock_model)
    if gate_width >= clock_model.period:
        # rounding at large timestamps must not drop clicks from a full-period gate
        return events, gates
    keep = np.abs(residue) <= 0.5 * gate_width * (1 + 1e-12)
    return events.select(keep), gates[keep]
