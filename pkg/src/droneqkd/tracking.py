"""Two-stage acquisition/pointing/tracking simulation.

A coarse gimbal loop and a fine fast-steering-mirror loop are cascaded
discrete-time PI controllers. Each loop measures the residual image offset
``e = d - u`` and moves its actuator by ``kp * e + ki * sum(e)`` for the next
tick, so a pure proportional loop shrinks a step by ``(1 - kp)`` per tick and
the integral term removes ramp-like drift. The coarse loop runs at a
submultiple of the fine rate and holds its position between updates.

Units are micrometres at the fibre image plane; the residual after the fine
loop sets the single-mode coupling efficiency.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import signal

from . import rng as rngmod

LOCK_LOST_LIMIT_UM = 1e6


class TrackingError(ValueError):
    pass


class UnstableLoopError(TrackingError):
    pass


@dataclass(frozen=True)
class Sinusoid:
    amplitude_um: float
    frequency_hz: float
    axis: str = "both"  # "x", "y" or "both"
    phase_rad: float = 0.0


@dataclass(frozen=True)
class TrackingConfig:
    """One APT unit. Disturbance = random walk (``white_sigma_*`` per fine tick) + sinusoids."""

    loop_rate_coarse: float = 100.0
    loop_rate_fine: float = 2000.0
    coarse_kp: float = 0.6
    coarse_ki: float = 0.05
    fine_kp: float = 0.5
    fine_ki: float = 0.02
    fine_fov_um: float = 500.0
    white_sigma_x_um: float = 1.0
    white_sigma_y_um: float = 1.0
    sinusoids: tuple = ()
    mode_field_radius_um: float = 2.5
    coarse_beacon_nm: float = 940.0
    fine_beacon_nm: float = 637.0

    def __post_init__(self):
        if not (self.loop_rate_coarse > 0 and self.loop_rate_fine > 0):
            raise TrackingError("loop rates must be > 0")
        if self.loop_rate_fine < self.loop_rate_coarse:
            raise TrackingError("loop_rate_fine must be >= loop_rate_coarse")
        ratio = self.loop_rate_fine / self.loop_rate_coarse
        if abs(ratio - round(ratio)) > 1e-9:
            raise TrackingError("loop_rate_fine must be an integer multiple of loop_rate_coarse")
        if not self.mode_field_radius_um > 0:
            raise TrackingError("mode_field_radius_um must be > 0")
        if not self.fine_fov_um > 0:
            raise TrackingError("fine_fov_um must be > 0")
        if self.white_sigma_x_um < 0 or self.white_sigma_y_um < 0:
            raise TrackingError("disturbance sigma must be >= 0")
        if len(self.sinusoids) > 4:
            raise TrackingError("at most 4 sinusoidal disturbance lines")
        object.__setattr__(
            self, "sinusoids",
            tuple(s if isinstance(s, Sinusoid) else Sinusoid(**s) for s in self.sinusoids),
        )
        for kp, ki, name in ((self.coarse_kp, self.coarse_ki, "coarse"),
                             (self.fine_kp, self.fine_ki, "fine")):
            if not is_stable(kp, ki):
                raise UnstableLoopError(f"{name} gains kp={kp}, ki={ki} outside the stable region")

    @property
    def decimation(self) -> int:
        return int(round(self.loop_rate_fine / self.loop_rate_coarse))

    def open_loop(self) -> "TrackingConfig":
        return replace(self, coarse_kp=0.0, coarse_ki=0.0, fine_kp=0.0, fine_ki=0.0)


def is_stable(kp: float, ki: float) -> bool:
    """Jury test on ``z^2 + (kp + ki - 2) z + (1 - kp)``; all-zero gains count as disabled."""
    if kp == 0 and ki == 0:
        return True
    return 0 < kp < 2 and ki >= 0 and 2 * kp + ki < 4


def sensitivity_coefficients(kp: float, ki: float):
    """``(b, a)`` of the error-from-disturbance transfer function in ``z^-1``."""
    return np.array([1.0, -2.0, 1.0]), np.array([1.0, kp + ki - 2.0, 1.0 - kp])


def sensitivity_gain(kp: float, ki: float, freq_hz: float, rate_hz: float) -> float:
    z = np.exp(1j * 2 * np.pi * freq_hz / rate_hz)
    return float(abs((z - 1) ** 2 / (z * z + (kp + ki - 2) * z + (1 - kp))))


@dataclass
class LoopState:
    kp: float
    ki: float
    decimation: int = 1
    tick: int = 0
    u: np.ndarray = field(default_factory=lambda: np.zeros(2))
    integral: np.ndarray = field(default_factory=lambda: np.zeros(2))
    pending: np.ndarray = None

    @classmethod
    def coarse(cls, cfg: TrackingConfig) -> "LoopState":
        return cls(cfg.coarse_kp, cfg.coarse_ki, cfg.decimation)

    @classmethod
    def fine(cls, cfg: TrackingConfig) -> "LoopState":
        return cls(cfg.fine_kp, cfg.fine_ki, 1)

    def step(self, disturbance) -> np.ndarray:
        d = np.asarray(disturbance, dtype=float)
        if self.tick % self.decimation == 0:
            if self.pending is not None:
                self.u = self.pending
            e = d - self.u
            self.integral = self.integral + e
            self.pending = self.u + self.kp * e + self.ki * self.integral
        else:
            e = d - self.u
        self.tick += 1
        return e


def step_coarse(state: LoopState, disturbance_sample, fine_fov_um: float = np.inf):
    """Advance the gimbal loop one fine tick; returns ``(state, residual, locked)``."""
    residual = state.step(disturbance_sample)
    locked = bool(np.hypot(*residual) <= fine_fov_um)
    return state, residual, locked


def step_fine(state: LoopState, coarse_residual) -> np.ndarray:
    return state.step(coarse_residual)


@dataclass(frozen=True, eq=False)
class PointingSeries:
    timestamps: np.ndarray
    error_x: np.ndarray
    error_y: np.ndarray
    coupling: np.ndarray
    locked: np.ndarray

    def __post_init__(self):
        n = self.timestamps.size
        if not all(a.size == n for a in (self.error_x, self.error_y, self.coupling, self.locked)):
            raise TrackingError("series arrays must have equal length")

    def __len__(self) -> int:
        return self.timestamps.size

    @property
    def rate(self) -> float:
        return 1.0 / (self.timestamps[1] - self.timestamps[0]) if len(self) > 1 else np.inf

    def window(self, t_start: float, t_end: float) -> "PointingSeries":
        sel = (self.timestamps >= t_start) & (self.timestamps < t_end)
        return PointingSeries(*(a[sel] for a in (self.timestamps, self.error_x, self.error_y,
                                                 self.coupling, self.locked)))

    def coupling_at(self, t) -> np.ndarray:
        """Zero-order-hold lookup of coupling at times ``t`` (seconds)."""
        # the small epsilon keeps exact tick instants on their own sample
        idx = np.floor(np.asarray(t) * self.rate + 1e-9).astype(np.int64)
        return self.coupling[np.clip(idx, 0, len(self) - 1)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "err_x_um", "err_y_um", "coupling"])
            for row in zip(self.timestamps, self.error_x, self.error_y, self.coupling):
                w.writerow([f"{row[0]:.6f}", f"{row[1]:.6f}", f"{row[2]:.6f}", f"{row[3]:.6g}"])


def coupling_efficiency(offset_r, mode_field_radius: float):
    """Gaussian-mode overlap ``exp(-(r/w)^2)`` for a lateral offset ``r``."""
    if not mode_field_radius > 0:
        raise ValueError("mode field radius must be > 0")
    r = np.asarray(offset_r, dtype=float)
    if np.any(r < 0):
        raise ValueError("offset must be >= 0")
    out = np.exp(-((r / mode_field_radius) ** 2))
    return float(out) if out.ndim == 0 else out


def rms(series: PointingSeries):
    if len(series) == 0:
        raise TrackingError("rms of an empty series")
    return (float(np.sqrt(np.mean(series.error_x ** 2))),
            float(np.sqrt(np.mean(series.error_y ** 2))))


def disturbance(cfg: TrackingConfig, n: int, seed) -> np.ndarray:
    """``(2, n)`` array of image-plane disturbance samples at the fine rate."""
    gen = rngmod.stream(seed, "tracking-disturbance")
    steps = gen.standard_normal((2, n))
    steps[0] *= cfg.white_sigma_x_um
    steps[1] *= cfg.white_sigma_y_um
    d = np.cumsum(steps, axis=1)
    t = np.arange(n) / cfg.loop_rate_fine
    for s in cfg.sinusoids:
        wave = s.amplitude_um * np.sin(2 * np.pi * s.frequency_hz * t + s.phase_rad)
        if s.axis in ("x", "both"):
            d[0] += wave
        if s.axis in ("y", "both"):
            d[1] += wave
    return d


def cascade(cfg: TrackingConfig, d: np.ndarray):
    """Vectorized cascade; returns ``(coarse_residual, fine_error)``, both ``(2, n)``."""
    n = d.shape[1]
    R = cfg.decimation
    b, a = sensitivity_coefficients(cfg.coarse_kp, cfg.coarse_ki)
    dc = d[:, ::R]
    ec = signal.lfilter(b, a, dc, axis=1)
    held = np.repeat(dc - ec, R, axis=1)[:, :n]
    coarse = d - held
    b, a = sensitivity_coefficients(cfg.fine_kp, cfg.fine_ki)
    fine = signal.lfilter(b, a, coarse, axis=1)
    return coarse, fine


def cascade_stepwise(cfg: TrackingConfig, d: np.ndarray):
    """Reference tick-by-tick cascade built from ``step_coarse``/``step_fine``."""
    cs, fs = LoopState.coarse(cfg), LoopState.fine(cfg)
    coarse = np.empty_like(d)
    fine = np.empty_like(d)
    for k in range(d.shape[1]):
        cs, r, _ = step_coarse(cs, d[:, k])
        coarse[:, k] = r
        fine[:, k] = step_fine(fs, r)
    return coarse, fine


def run_tracking(cfg: TrackingConfig, duration_s: float, seed) -> PointingSeries:
    if not duration_s > 0:
        raise TrackingError("duration must be > 0")
    n = int(round(duration_s * cfg.loop_rate_fine))
    if n < 1:
        raise TrackingError("duration shorter than one fine-loop tick")
    d = disturbance(cfg, n, seed)
    coarse, fine = cascade(cfg, d)
    if not np.all(np.isfinite(fine)) or np.abs(fine).max() > LOCK_LOST_LIMIT_UM:
        raise UnstableLoopError("tracking residual diverged")
    locked = np.hypot(coarse[0], coarse[1]) <= cfg.fine_fov_um
    c = coupling_efficiency(np.hypot(fine[0], fine[1]), cfg.mode_field_radius_um)
    c = np.where(locked, c, 0.0)
    t = np.arange(n) / cfg.loop_rate_fine
    return PointingSeries(t, fine[0], fine[1], c, locked)


def calibrate_white_sigma(cfg: TrackingConfig, target_rms: Sequence[float], duration_s: float,
                          seed, grid: Sequence[float] = None):
    """Grid-search the per-axis random-walk sigma to hit target residual RMS (x, y)."""
    if grid is None:
        grid = np.round(np.arange(0.1, 8.0001, 0.05), 4)
    grid = np.asarray(grid, dtype=float)
    best = []
    for axis, target in enumerate(target_rms):
        errs = []
        for g in grid:
            trial = replace(cfg, white_sigma_x_um=g, white_sigma_y_um=g)
            errs.append(abs(rms(run_tracking(trial, duration_s, seed))[axis] - target))
        best.append(float(grid[int(np.argmin(errs))]))
    return replace(cfg, white_sigma_x_um=best[0], white_sigma_y_um=best[1])
