"""Syndrome-based LDPC reconciliation.

Codes default to column weight 3 (irregular profiles are optional), are
row-balanced, generated deterministically from a 32-byte seed, with short
(length-4) cycles removed by greedy edge swaps. Decoding is flooding sum-product belief propagation that
steers the receiver's bits toward the transmitter's syndrome.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .. import rng as rngmod

COLUMN_WEIGHT = 3
MAX_ITERATIONS = 60
_SWAP_ATTEMPTS = 200
_MAX_PASSES = 20


class DecodeFailure(RuntimeError):
    """Belief propagation did not reach the target syndrome."""

    def __init__(self, iterations: int):
        super().__init__(f"no syndrome match after {iterations} iterations")
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class LdpcCode:
    n: int
    m: int
    seed: bytes
    degrees: object
    edge_var: np.ndarray  # sorted by check, then variable
    edge_chk: np.ndarray
    row_ptr: np.ndarray
    four_cycles: int
    H: sparse.csr_matrix = field(repr=False)

    @property
    def column_weights(self) -> np.ndarray:
        return np.bincount(self.edge_var, minlength=self.n)

    @property
    def row_weights(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def structure_key(self) -> bytes:
        return self.edge_var.tobytes() + self.edge_chk.tobytes()

    def column(self, i: int) -> np.ndarray:
        col = np.zeros(self.m, dtype=np.uint8)
        col[self.edge_chk[self.edge_var == i]] = 1
        return col


def _normalize_seed(seed) -> bytes:
    if isinstance(seed, int):
        return seed.to_bytes(32, "little")
    seed = bytes(seed)
    if len(seed) != 32:
        raise ValueError("code seed must be 32 bytes")
    return seed


def _variable_degrees(n: int, profile) -> np.ndarray:
    if isinstance(profile, int):
        return np.full(n, profile, dtype=np.int64)
    items = sorted(profile)
    counts = [int(round(frac * n)) for _, frac in items]
    counts[0] += n - sum(counts)
    return np.repeat([d for d, _ in items], counts).astype(np.int64)


def build_code(seed, n: int, m: int, degrees=COLUMN_WEIGHT) -> LdpcCode:
    """Deterministic code of length ``n`` with ``m`` balanced checks.

    ``degrees`` is either a constant column weight or a tuple of
    ``(column_weight, fraction_of_bits)`` pairs for an irregular profile.
    """
    if not 0 < m < n:
        raise ValueError(f"need 0 < m < n, got n={n}, m={m}")
    if not isinstance(degrees, int):
        degrees = tuple((int(d), float(f)) for d, f in degrees)
    col = _variable_degrees(int(n), degrees)
    if col.min() < 2:
        raise ValueError("every bit must participate in at least 2 checks")
    if col.max() > m:
        raise ValueError("column weight exceeds the number of checks")
    return _build_cached(_normalize_seed(seed), int(n), int(m), degrees)


@functools.lru_cache(maxsize=32)
def _build_cached(seed: bytes, n: int, m: int, degrees) -> LdpcCode:
    gen = rngmod.stream(seed, "ldpc", n, m)
    col = _variable_degrees(n, degrees)
    n_edges = int(col.sum())
    owner = np.repeat(np.arange(n), col)
    # balanced check sockets: row weights differ by at most one
    sockets = np.arange(n_edges) % m
    sockets = gen.permutation(sockets)
    checks_of = [set() for _ in range(n)]
    vars_of = [set() for _ in range(m)]
    pending = []
    for e in range(n_edges):
        v, c = int(owner[e]), int(sockets[e])
        if c in checks_of[v]:
            pending.append((v, c))
        else:
            checks_of[v].add(c)
            vars_of[c].add(v)
    for v, c in pending:
        _place_duplicate(gen, v, c, checks_of, vars_of, m)

    four_cycles = _remove_four_cycles(gen, checks_of, vars_of)

    pairs = sorted((c, v) for v in range(n) for c in checks_of[v])
    edge_chk = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=n_edges)
    edge_var = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=n_edges)
    row_ptr = np.concatenate([[0], np.cumsum(np.bincount(edge_chk, minlength=m))])
    H = sparse.csr_matrix(
        (np.ones(n_edges, dtype=np.int32), edge_var, row_ptr), shape=(m, n)
    )
    return LdpcCode(n, m, seed, degrees, edge_var, edge_chk, row_ptr, four_cycles, H)


def _place_duplicate(gen, v, c, checks_of, vars_of, m):
    """Resolve a repeated (v, c) socket by swapping with another edge."""
    n = len(checks_of)
    for _ in range(10_000):
        u = int(gen.integers(n))
        if u == v or c in checks_of[u]:
            continue
        for d in checks_of[u]:
            if d not in checks_of[v]:
                checks_of[u].remove(d)
                vars_of[d].remove(u)
                checks_of[u].add(c)
                vars_of[c].add(u)
                checks_of[v].add(d)
                vars_of[d].add(v)
                return
    raise RuntimeError("could not place edge without duplicates")


def _creates_cycle(x: int, new_checks: set, vars_of, checks_of, c_new: int, skip: int) -> bool:
    for w in vars_of[c_new]:
        if w == x or w == skip:
            continue
        if len(checks_of[w] & new_checks) >= 2:
            return True
    return False


def _count_cycles(checks_of, vars_of) -> list:
    found = []
    for v, cs in enumerate(checks_of):
        seen = set()
        for c in cs:
            for w in vars_of[c]:
                if w > v and w not in seen and len(checks_of[w] & cs) >= 2:
                    seen.add(w)
                    found.append((v, w))
    return found


def _remove_four_cycles(gen, checks_of, vars_of) -> int:
    n = len(checks_of)
    cycles = _count_cycles(checks_of, vars_of)
    for _ in range(_MAX_PASSES):
        if not cycles:
            break
        for v, w in cycles:
            shared = checks_of[v] & checks_of[w]
            if len(shared) < 2:
                continue
            c1 = min(shared)
            for _ in range(_SWAP_ATTEMPTS):
                u = int(gen.integers(n))
                if u in (v, w) or c1 in checks_of[u]:
                    continue
                c2 = int(gen.choice(sorted(checks_of[u])))
                if c2 in checks_of[v]:
                    continue
                v_new = (checks_of[v] - {c1}) | {c2}
                u_new = (checks_of[u] - {c2}) | {c1}
                if _creates_cycle(v, v_new, vars_of, checks_of, c2, u):
                    continue
                if _creates_cycle(u, u_new, vars_of, checks_of, c1, v):
                    continue
                checks_of[v] = v_new
                checks_of[u] = u_new
                vars_of[c1].remove(v)
                vars_of[c1].add(u)
                vars_of[c2].remove(u)
                vars_of[c2].add(v)
                break
        cycles = _count_cycles(checks_of, vars_of)
    return len(cycles)


def syndrome(code: LdpcCode, bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape != (code.n,):
        raise ValueError(f"expected {code.n} bits, got shape {bits.shape}")
    return (code.H @ bits.astype(np.int32) % 2).astype(np.uint8)


def check_bits_for(qber: float, n: int, f: float) -> int:
    """Check-bit budget ``ceil(f * H2(qber) * n)``."""
    from ..core import binary_entropy

    return int(np.ceil(f * binary_entropy(qber) * n))


def decode(code: LdpcCode, noisy_bits, target_syndrome, qber_prior: float,
           max_iterations: int = MAX_ITERATIONS):
    """Return ``(corrected_bits, iterations)``; raise DecodeFailure otherwise.

    Success is only reported once the hard decision reproduces
    ``target_syndrome`` exactly.
    """
    if not 0 < qber_prior < 0.5:
        raise ValueError("qber_prior must lie in (0, 0.5)")
    y = np.asarray(noisy_bits, dtype=np.uint8)
    s = np.asarray(target_syndrome, dtype=np.uint8)
    if y.shape != (code.n,) or s.shape != (code.m,):
        raise ValueError("bit or syndrome length does not match the code")
    if np.array_equal(syndrome(code, y), s):
        return y.copy(), 0

    ev, ec = code.edge_var, code.edge_chk
    starts = code.row_ptr[:-1]
    prior = (1.0 - 2.0 * y) * np.log((1.0 - qber_prior) / qber_prior)
    chk_sign = s[ec].astype(bool)
    m_cv = np.zeros(ev.size)
    for it in range(1, max_iterations + 1):
        total = prior + np.bincount(ev, weights=m_cv, minlength=code.n)
        m_vc = total[ev] - m_cv
        t = np.tanh(0.5 * m_vc)
        neg = t < 0
        logabs = np.log(np.maximum(np.abs(t), 1e-300))
        row_log = np.add.reduceat(logabs, starts)
        row_par = np.add.reduceat(neg.astype(np.int64), starts) & 1
        ex_mag = np.exp(row_log[ec] - logabs)
        ex_neg = (row_par[ec].astype(bool) ^ neg) ^ chk_sign
        m_cv = 2.0 * np.arctanh(np.minimum(ex_mag, 1.0 - 1e-15))
        m_cv[ex_neg] *= -1.0
        total = prior + np.bincount(ev, weights=m_cv, minlength=code.n)
        hard = (total < 0).astype(np.uint8)
        if np.array_equal(syndrome(code, hard), s):
            return hard, it
    raise DecodeFailure(max_iterations)
