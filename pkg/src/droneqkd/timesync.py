"""Gate-clock recovery from the SYNC pulse train.

Recovery is two-phase: the coarse phase comes from the peak of a 64-bin
histogram of timestamps folded modulo the nominal period, then integer gate
numbers are resolved against a running least-squares fit over a growing
prefix of the data, so drift never accumulates past half a period between
refits.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

MIN_SYNC_PULSES = 1000
MAX_DRIFT = 1e-4
HIST_BINS = 64
PHASE_SAMPLES = 100_000  # the coarse phase needs far fewer samples than the fit


class ClockError(ValueError):
    pass


class InsufficientDataError(ClockError):
    pass


class LockFailure(ClockError):
    pass


@dataclass(frozen=True)
class ClockModel:
    """Gate ``k`` is centred at ``offset + (k - first_gate) * period * (1 + drift)``."""

    offset: float
    drift: float
    period: float
    fit_residual_rms: float = 0.0
    first_gate: int = 0

    def __post_init__(self):
        if not abs(self.drift) < MAX_DRIFT:
            raise LockFailure(f"drift {self.drift:.3g} outside +-{MAX_DRIFT}")
        if self.fit_residual_rms < 0:
            raise ValueError("fit_residual_rms must be >= 0")

    @property
    def effective_period(self) -> float:
        return self.period * (1.0 + self.drift)

    def gate_time(self, gate) -> np.ndarray:
        return self.offset + (np.asarray(gate) - self.first_gate) * self.effective_period


def _coarse_phase(rel: np.ndarray, period: float) -> float:
    folded = np.mod(rel, period)
    hist, edges = np.histogram(folded, bins=HIST_BINS, range=(0.0, period))
    peak = int(np.argmax(hist))
    # circular mean of the samples in the peak bin and its neighbours
    lo = edges[peak] - period / HIST_BINS
    hi = edges[peak + 1] + period / HIST_BINS
    shifted = np.mod(folded - lo, period) + lo
    near = shifted[(shifted >= lo) & (shifted <= hi)]
    return float(near.mean())


def _fit(k: np.ndarray, rel: np.ndarray):
    kc = k.mean()
    dk = k - kc
    slope = float(np.dot(dk, rel - rel.mean()) / np.dot(dk, dk))
    intercept = float(rel.mean() - slope * kc)
    return intercept, slope


def recover_clock(sync_timestamps, nominal_period: float, origin: Optional[float] = None,
                  origin_gate: int = 0) -> ClockModel:
    """Fit offset and linear drift to SYNC arrival times (seconds, receiver clock).

    Gate numbering is anchored so that the gate nearest ``origin`` (default:
    the earliest timestamp) is ``origin_gate``.
    """
    t = np.sort(np.asarray(sync_timestamps, dtype=float))
    if t.size < MIN_SYNC_PULSES:
        raise InsufficientDataError(f"need >= {MIN_SYNC_PULSES} sync pulses, got {t.size}")
    t0 = t[0]
    rel = t - t0
    intercept = _coarse_phase(rel[:PHASE_SAMPLES], nominal_period)
    if intercept > nominal_period / 2:
        intercept -= nominal_period
    slope = nominal_period

    n = min(MIN_SYNC_PULSES, t.size)
    while True:
        k = np.rint((rel[:n] - intercept) / slope)
        intercept, slope = _fit(k, rel[:n])
        if n == t.size:
            break
        n = min(4 * n, t.size)

    k = np.rint((rel - intercept) / slope)
    resid = rel - (intercept + k * slope)
    rms = float(np.sqrt(np.mean(resid ** 2)))
    if rms > nominal_period / 4:
        raise LockFailure(f"fit residual {rms:.3g} s exceeds a quarter period")
    drift = slope / nominal_period - 1.0

    if origin is None:
        origin = t0
    k_origin = np.rint((origin - t0 - intercept) / slope)
    offset = t0 + intercept + k_origin * slope
    return ClockModel(offset, drift, nominal_period, rms, origin_gate)


def assign_gates(times, clock: ClockModel):
    """Nearest gate index and the signed residue (seconds) from its centre."""
    t = np.asarray(times, dtype=float)
    p = clock.effective_period
    k = np.rint((t - clock.offset) / p)
    residue = t - (clock.offset + k * p)
    return k.astype(np.int64) + clock.first_gate, residue


def piecewise_refit(sync_timestamps, nominal_period: float, window_s: float,
                    base: ClockModel) -> list:
    """Independent fits over consecutive windows, gate numbering taken from ``base``."""
    t = np.sort(np.asarray(sync_timestamps, dtype=float))
    models = []
    if t.size == 0:
        return models
    start = t[0]
    while start <= t[-1]:
        sel = t[(t >= start) & (t < start + window_s)]
        if sel.size >= MIN_SYNC_PULSES:
            g0, _ = assign_gates(sel[:1], base)
            models.append(recover_clock(sel, nominal_period, origin=sel[0], origin_gate=int(g0[0])))
        start += window_s
    return models
