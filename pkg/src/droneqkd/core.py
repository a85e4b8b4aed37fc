"""Shared domain types, protocol parameters and elementary numerics."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Union

import numpy as np

Number = Union[float, int, str, Fraction]

PROB_SUM_TOL = 1e-12


class DomainError(ValueError):
    """Input outside the domain of a numerical function."""


class ParamError(ValueError):
    """A parameter set violates one of its invariants."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class Basis(enum.IntEnum):
    RECTILINEAR = 0  # H/V
    DIAGONAL = 1  # D/A


class IntensityClass(enum.IntEnum):
    SIGNAL = 0
    DECOY = 1
    VACUUM = 2


class Detector(enum.IntEnum):
    """Receiver detector channels; value doubles as the wire id."""

    H = 0
    V = 1
    D = 2
    A = 3

    @property
    def basis(self) -> Basis:
        return Basis(self.value // 2)

    @property
    def bit(self) -> int:
        return self.value % 2

    @classmethod
    def of(cls, basis: int, bit: int) -> "Detector":
        return cls(2 * int(basis) + int(bit))


def _as_float(name: str, value: Number) -> float:
    try:
        return float(parse_exact(value))
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise ParamError(name, f"not a number: {value!r}") from exc


def parse_exact(value: Number) -> Fraction | float:
    """Parse decimal/rational strings exactly; pass floats through."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, bool):
        raise TypeError("boolean is not a number")
    if isinstance(value, int):
        return Fraction(value)
    return float(value)


@dataclass(frozen=True)
class ProtocolParams:
    """Decoy-state BB84 source and post-processing parameters.

    Defaults are the flight configuration: signal/decoy/vacuum at
    0.73/0.20/0 photons sent 50/25/25 %, 50 MHz gates of 500 ps,
    10 % parameter-estimation sample.
    """

    mu_signal: float = 0.73
    mu_decoy: float = 0.20
    mu_vacuum: float = 0.0
    p_signal: Number = "0.5"
    p_decoy: Number = "0.25"
    p_vacuum: Number = "0.25"
    gate_rate: float = 50e6
    gate_width: float = 500e-12
    basis_factor_q: float = 0.5
    sample_fraction: float = 0.1
    ec_efficiency_f: float = 1.16

    def probabilities(self) -> np.ndarray:
        return np.array(
            [float(parse_exact(p)) for p in (self.p_signal, self.p_decoy, self.p_vacuum)]
        )

    @property
    def period(self) -> float:
        return 1.0 / self.gate_rate

    def mu_of(self, intensity: int) -> float:
        return (self.mu_signal, self.mu_decoy, self.mu_vacuum)[int(intensity)]

    def replace(self, **changes) -> "ProtocolParams":
        return replace(self, **changes)


def validate_params(params: ProtocolParams) -> ProtocolParams:
    """Return ``params`` unchanged if every invariant holds, else raise ParamError."""
    probs = {}
    for name in ("p_signal", "p_decoy", "p_vacuum"):
        raw = getattr(params, name)
        try:
            probs[name] = parse_exact(raw)
        except (TypeError, ValueError, ZeroDivisionError) as exc:
            raise ParamError(name, f"not a number: {raw!r}") from exc
        if not 0 <= probs[name] <= 1:
            raise ParamError(name, f"probability {float(probs[name])} outside [0, 1]")
    total = sum(probs.values())
    if all(isinstance(p, Fraction) for p in probs.values()):
        bad = total != 1
    else:
        bad = abs(float(total) - 1.0) > PROB_SUM_TOL
    if bad:
        raise ParamError("p_signal+p_decoy+p_vacuum", f"probabilities sum to {float(total):.12g}")

    mu_s = _as_float("mu_signal", params.mu_signal)
    mu_d = _as_float("mu_decoy", params.mu_decoy)
    mu_v = _as_float("mu_vacuum", params.mu_vacuum)
    if mu_v != 0:
        raise ParamError("mu_vacuum", "vacuum intensity must be 0")
    if not mu_d > 0:
        raise ParamError("mu_decoy", "decoy intensity must exceed vacuum (> 0)")
    if not mu_s > mu_d:
        raise ParamError("mu_decoy", f"decoy exceeds signal ({mu_d} >= {mu_s})")

    if not params.gate_rate > 0:
        raise ParamError("gate_rate", "must be > 0")
    if not 0 < params.gate_width < 1.0 / params.gate_rate:
        raise ParamError("gate_width", "must lie in (0, 1/gate_rate)")
    if not 0 < params.sample_fraction < 1:
        raise ParamError("sample_fraction", "must lie in (0, 1)")
    if not params.ec_efficiency_f >= 1:
        raise ParamError("ec_efficiency_f", "must be >= 1")
    if not 0 < params.basis_factor_q <= 1:
        raise ParamError("basis_factor_q", "must lie in (0, 1]")
    return params


@dataclass(frozen=True)
class LinkBudget:
    """Lumped drone-to-ground loss budget in dB.

    ``distance_m``, ``beam_aperture_fwhm_mm`` and ``rayleigh_length_m`` are
    documentation only: the Rayleigh range is several times the link
    distance, so diffraction is folded into ``link_loss_db``.
    """

    link_loss_db: float = 9.0
    projection_loss_db: float = 3.0
    detection_loss_db: float = 5.0
    other_optics_loss_db: float = 0.8
    unmodeled_loss_db: float = 0.0
    distance_m: float = 200.0
    beam_aperture_fwhm_mm: float = 26.4
    rayleigh_length_m: float = 676.0

    def __post_init__(self):
        for name in (
            "link_loss_db",
            "projection_loss_db",
            "detection_loss_db",
            "other_optics_loss_db",
            "unmodeled_loss_db",
        ):
            if not getattr(self, name) >= 0:
                raise ParamError(name, "loss must be >= 0 dB")

    @property
    def total_db(self) -> float:
        return (
            self.link_loss_db
            + self.projection_loss_db
            + self.detection_loss_db
            + self.other_optics_loss_db
        )

    @property
    def effective_db(self) -> float:
        """Total loss including the calibration knob for unmodeled loss."""
        return self.total_db + self.unmodeled_loss_db


def binary_entropy(e):
    """Binary Shannon entropy in bits; accepts scalars or arrays."""
    arr = np.asarray(e, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any((arr < 0) | (arr > 1)):
        raise DomainError(f"binary_entropy argument outside [0, 1]: {e!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -arr * np.log2(arr) - (1 - arr) * np.log2(1 - arr)
    h = np.where((arr == 0) | (arr == 1), 0.0, h)
    return float(h) if h.ndim == 0 else h


def db_to_transmittance(loss_db: float) -> float:
    if not loss_db >= 0:
        raise DomainError(f"loss must be >= 0 dB, got {loss_db}")
    return 10.0 ** (-loss_db / 10.0)


def transmittance_to_db(eta: float) -> float:
    if not 0 < eta <= 1:
        raise DomainError(f"transmittance must lie in (0, 1], got {eta}")
    return -10.0 * math.log10(eta)
