"""Vacuum + weak-decoy bounds and the asymptotic secure key rate.

With signal intensity ``mu``, decoy ``nu`` and vacuum, the single-photon yield
and error are bounded by::

    Y1 >= mu / (mu*nu - nu^2) * (Q_nu e^nu - Q_mu e^mu nu^2/mu^2 - (mu^2 - nu^2)/mu^2 Y0)
    e1 <= (E_nu Q_nu e^nu - e0 Y0) / (Y1 nu),        e0 = 1/2

and the key fraction per gate is::

    R = q p_mu { -Q_mu f H2(E_mu) + Q1 [1 - H2(e1)] },   Q1 = Y1 mu e^-mu
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Dict, Mapping

from .core import DomainError, IntensityClass, ProtocolParams, binary_entropy

E0 = 0.5
PA_SAFETY_BITS = 128


class EstimationError(ValueError):
    pass


class UndefinedBoundError(EstimationError):
    pass


@dataclass(frozen=True)
class Tally:
    sent: int
    detected: int
    compared: int = 0
    errors: int = 0

    @property
    def gain(self) -> float:
        if self.sent == 0:
            raise EstimationError("no pulses sent in this class")
        return self.detected / self.sent

    @property
    def error_rate(self) -> float:
        return self.errors / self.compared if self.compared else 0.0

    def __add__(self, other: "Tally") -> "Tally":
        return Tally(self.sent + other.sent, self.detected + other.detected,
                     self.compared + other.compared, self.errors + other.errors)


@dataclass(frozen=True)
class DecoyEstimate:
    Q_mu: float
    Q_nu: float
    Y0: float
    E_mu: float
    E_nu: float
    Y1_lower: float
    e1_upper: float
    Q1_lower: float
    R_per_gate: float
    R_per_second: float
    e0: float = E0

    def as_dict(self) -> dict:
        return asdict(self)


def bound_y1(Q_mu: float, Q_nu: float, Y0: float, mu: float, nu: float) -> float:
    if not mu > nu > 0:
        raise DomainError(f"need mu > nu > 0, got mu={mu}, nu={nu}")
    bracket = (Q_nu * math.exp(nu) - Q_mu * math.exp(mu) * nu ** 2 / mu ** 2
               - (mu ** 2 - nu ** 2) / mu ** 2 * Y0)
    return max(0.0, min(1.0, mu / (mu * nu - nu ** 2) * bracket))


def bound_e1(E_nu: float, Q_nu: float, Y0: float, Y1_lower: float, nu: float) -> float:
    """Upper bound on the single-photon error rate, clamped to [0, 1/2]."""
    if not nu > 0:
        raise DomainError("nu must be > 0")
    if not Y1_lower > 0:
        raise UndefinedBoundError("single-photon yield bound is zero")
    e1 = (E_nu * Q_nu * math.exp(nu) - E0 * Y0) / (Y1_lower * nu)
    return min(0.5, max(0.0, e1))


def _h2(e: float) -> float:
    return binary_entropy(min(max(e, 0.0), 0.5))


def key_fraction(Q_mu: float, E_mu: float, Q1: float, e1: float, f: float) -> float:
    """Bracketed term ``-Q_mu f H2(E_mu) + Q1 (1 - H2(e1))`` (may be negative)."""
    return -Q_mu * f * _h2(E_mu) + Q1 * (1.0 - _h2(e1))


def secure_key_rate(est: DecoyEstimate, params: ProtocolParams) -> float:
    p_mu = float(params.probabilities()[IntensityClass.SIGNAL])
    val = params.basis_factor_q * p_mu * key_fraction(
        est.Q_mu, est.E_mu, est.Q1_lower, est.e1_upper, params.ec_efficiency_f)
    return max(0.0, val)


def secure_key_length(n_key_signal_bits: int, est: DecoyEstimate, leak_ec_bits: int) -> int:
    """Bits surviving privacy amplification for a block of reconciled signal bits."""
    if n_key_signal_bits <= 0:
        raise ValueError("block must contain key bits")
    if est.Q1_lower <= 0 or est.Q_mu <= 0:
        return 0
    raw = n_key_signal_bits * (est.Q1_lower / est.Q_mu) * (1.0 - _h2(est.e1_upper))
    return max(0, math.floor(raw - leak_ec_bits - PA_SAFETY_BITS))


def estimate(Q_mu: float, Q_nu: float, Y0: float, E_mu: float, E_nu: float,
             params: ProtocolParams) -> DecoyEstimate:
    mu, nu = params.mu_signal, params.mu_decoy
    y1 = bound_y1(Q_mu, Q_nu, Y0, mu, nu)
    if y1 > 0:
        e1 = bound_e1(E_nu, Q_nu, Y0, y1, nu)
    else:
        e1 = 0.5
    q1 = y1 * mu * math.exp(-mu)
    partial = DecoyEstimate(Q_mu, Q_nu, Y0, E_mu, E_nu, y1, e1, q1, 0.0, 0.0)
    r = secure_key_rate(partial, params)
    return DecoyEstimate(Q_mu, Q_nu, Y0, E_mu, E_nu, y1, e1, q1, r, r * params.gate_rate)


def estimate_from_tallies(tallies: Mapping[IntensityClass, Tally],
                          params: ProtocolParams) -> DecoyEstimate:
    for cls in IntensityClass:
        if tallies[cls].sent == 0:
            raise EstimationError(f"no {cls.name.lower()} pulses sent")
    s, d, v = (tallies[c] for c in IntensityClass)
    return estimate(s.gain, d.gain, v.gain, s.error_rate, d.error_rate, params)


def standard_errors(tallies: Mapping[IntensityClass, Tally]) -> Dict[str, float]:
    """Binomial standard errors of the measured gains and error rates."""
    out = {}
    for cls, t in tallies.items():
        name = cls.name.lower()
        p = t.gain
        out[f"Q_{name}"] = math.sqrt(max(p * (1 - p), 0.0) / t.sent)
        if t.compared:
            e = t.error_rate
            out[f"E_{name}"] = math.sqrt(max(e * (1 - e), 0.0) / t.compared)
    return out


# analytic channel model: gains and errors of a lossy channel with dark yield
def analytic_gain(mu: float, eta: float, Y0: float) -> float:
    return Y0 + 1.0 - math.exp(-eta * mu)


def analytic_error(mu: float, eta: float, Y0: float, e_intrinsic: float) -> float:
    return (E0 * Y0 + e_intrinsic * (1.0 - math.exp(-eta * mu))) / analytic_gain(mu, eta, Y0)


def true_y1(eta: float, Y0: float) -> float:
    return 1.0 - (1.0 - Y0) * (1.0 - eta)


def true_e1(eta: float, Y0: float, e_intrinsic: float) -> float:
    return (E0 * Y0 + e_intrinsic * eta * (1.0 - Y0)) / true_y1(eta, Y0)


def analytic_estimate(eta: float, Y0: float, e_intrinsic: float,
                      params: ProtocolParams) -> DecoyEstimate:
    mu, nu = params.mu_signal, params.mu_decoy
    return estimate(
        analytic_gain(mu, eta, Y0), analytic_gain(nu, eta, Y0), Y0,
        analytic_error(mu, eta, Y0, e_intrinsic), analytic_error(nu, eta, Y0, e_intrinsic),
        params,
    )


def read_tally_file(path) -> Dict[IntensityClass, Tally]:
    """CSV with header ``intensity,sent,detected,errors``; compared defaults to detected."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"intensity", "sent", "detected", "errors"} - set(reader.fieldnames or ())
        if missing:
            raise EstimationError(f"tally file missing columns: {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                cls = IntensityClass[row["intensity"].strip().upper()]
                sent, det, err = (int(row[k]) for k in ("sent", "detected", "errors"))
                compared = int(row["compared"]) if row.get("compared") else det
            except (KeyError, ValueError) as exc:
                raise EstimationError(f"line {lineno}: {exc}") from exc
            out[cls] = Tally(sent, det, compared, err)
    if set(out) != set(IntensityClass):
        raise EstimationError("tally file needs one row per intensity class")
    return out
