"""Ten-second metric windows: sifted rate, sampled QBER, secure rate, tracking RMS."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence

HEADER = ("t_s", "sifted_bits", "sifted_hz", "qber", "secure_hz",
          "drone_rms_x", "drone_rms_y", "ground_rms_x", "ground_rms_y")


@dataclass(frozen=True)
class Chunk:
    """Session statistics over ``[t_start, t_end)``; squared tracking errors are summed."""

    t_start: float
    t_end: float
    sifted_bits: int
    sample_compared: int
    sample_errors: int
    secure_bits: float  # asymptotic rate times chunk duration
    tracking_sq: tuple = (0.0, 0.0, 0.0, 0.0)  # drone x, drone y, ground x, ground y
    tracking_n: tuple = (0, 0)  # drone samples, ground samples


@dataclass(frozen=True)
class WindowMetrics:
    window_start_s: float
    sifted_bits: int
    sifted_rate_hz: float
    sampled_qber: float
    secure_rate_hz: float
    tracking_rms: tuple  # drone x, drone y, ground x, ground y (um)

    def row(self) -> list:
        return [f"{self.window_start_s:g}", str(self.sifted_bits), f"{self.sifted_rate_hz:.6g}",
                f"{self.sampled_qber:.6g}", f"{self.secure_rate_hz:.6g}",
                *(f"{v:.6g}" for v in self.tracking_rms)]


def emit_metrics(chunks: Iterable[Chunk], window_s: float = 10.0) -> List[WindowMetrics]:
    """Aggregate chunks into whole windows; a trailing partial window is dropped."""
    chunks = sorted(chunks, key=lambda c: c.t_start)
    if not chunks:
        return []
    end = max(c.t_end for c in chunks)
    n_windows = int(math.floor(end / window_s + 1e-9))
    out = []
    for k in range(n_windows):
        lo, hi = k * window_s, (k + 1) * window_s
        eps = 1e-9 * window_s
        inside = [c for c in chunks if c.t_start >= lo - eps and c.t_end <= hi + eps]
        covered = sum(c.t_end - c.t_start for c in inside)
        if abs(covered - window_s) > eps * 10:
            continue
        sifted = sum(c.sifted_bits for c in inside)
        compared = sum(c.sample_compared for c in inside)
        errors = sum(c.sample_errors for c in inside)
        secure = sum(c.secure_bits for c in inside)
        sq = [sum(c.tracking_sq[i] for c in inside) for i in range(4)]
        nd = sum(c.tracking_n[0] for c in inside)
        ng = sum(c.tracking_n[1] for c in inside)
        rms = tuple(math.sqrt(sq[i] / n) if n else 0.0
                    for i, n in enumerate((nd, nd, ng, ng)))
        out.append(WindowMetrics(lo, sifted, sifted / window_s,
                                 errors / compared if compared else 0.0,
                                 secure / window_s, rms))
    return out


def write_metrics(rows: Sequence[WindowMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in rows:
            w.writerow(r.row())
