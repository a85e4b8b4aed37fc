from __future__ import annotations

import numpy as np
import pytest

from droneqkd import rng
from droneqkd.core import IntensityClass, ProtocolParams
from droneqkd.decoy import EstimationError
from droneqkd.sifting import (MATCH_FLAG, ProtocolError, SiftedBlock, detected_counts, disclosed_positions,
                              sample_split, sift, sift_transmitter, tally, transmitter_match)
from droneqkd.transmitter import generate_block


@pytest.fixture(scope="module")
def pulses():
    p, _ = generate_block(rng.stream(1, "pulses"), ProtocolParams(), 20_000, start_index=1000)
    return p


def _announce(pulses, n=3000, seed=2):
    gen = rng.stream(seed, "announce")
    gates = np.sort(gen.choice(len(pulses), n, replace=False)) + pulses.start
    bases = gen.integers(0, 2, n).astype(np.int8)
    return gates, bases


def test_codes_carry_class_and_match(pulses):
    gates, bases = _announce(pulses)
    codes = transmitter_match(pulses, gates, bases)
    idx = gates - pulses.start
    assert np.array_equal(codes & 0x03, pulses.intensity[idx])
    vac = pulses.intensity[idx] == IntensityClass.VACUUM
    match = (pulses.basis[idx] == bases) | vac
    assert np.array_equal((codes & MATCH_FLAG) > 0, match)


def test_both_parties_hold_identical_index_sets(pulses):
    gates, bases = _announce(pulses)
    codes, tx = sift_transmitter(pulses, gates, bases)
    rx_bits = rng.stream(3, "rx").integers(0, 2, gates.size).astype(np.int8)
    rx = sift(gates, bases, rx_bits, codes)
    assert np.array_equal(tx.gates, rx.gates)
    assert np.array_equal(tx.intensity, rx.intensity)
    assert np.array_equal(tx.basis, rx.basis)
    nonvac = tx.intensity != IntensityClass.VACUUM
    assert np.array_equal(tx.bits[nonvac], pulses.bit[tx.gates[nonvac] - pulses.start])


def test_announcement_errors(pulses):
    gates, bases = _announce(pulses)
    dup = gates.copy()
    dup[1] = dup[0]
    with pytest.raises(ProtocolError, match="duplicate"):
        transmitter_match(pulses, dup, bases)
    with pytest.raises(ProtocolError, match="never sent"):
        transmitter_match(pulses, gates + len(pulses), bases)
    with pytest.raises(ProtocolError):
        transmitter_match(pulses, gates, bases[:-1])
    with pytest.raises(ProtocolError):
        sift(gates, bases, bases, np.zeros(gates.size - 1, np.uint8))


def test_sample_split_is_shared_and_signal_only(pulses):
    gates, bases = _announce(pulses)
    _, block = sift_transmitter(pulses, gates, bases)
    seed = bytes(range(32))
    sample, key = sample_split(block, 0.1, seed)
    sample2, key2 = sample_split(block, 0.1, seed)
    assert np.array_equal(sample, sample2) and np.array_equal(key, key2)
    signal = block.positions(IntensityClass.SIGNAL)
    assert sample.size == int(np.floor(0.1 * signal.size))
    assert np.array_equal(np.sort(np.concatenate([sample, key])), signal)
    assert not np.intersect1d(disclosed_positions(block, sample), key).size
    with pytest.raises(ValueError):
        sample_split(block, 1.0, seed)


def test_tally_counts(pulses):
    gates, bases = _announce(pulses)
    codes, block = sift_transmitter(pulses, gates, bases)
    sample, _ = sample_split(block, 0.1, bytes(32))
    shown = disclosed_positions(block, sample)
    own = block.bits[shown]
    peer = own.copy()
    peer[:3] ^= 1
    sent = np.bincount(pulses.intensity, minlength=3)
    t = tally(block, sent, detected_counts(codes), sample, own, peer)
    assert sum(t[c].errors for c in IntensityClass) == 3
    assert t[IntensityClass.SIGNAL].compared == sample.size
    assert t[IntensityClass.VACUUM].compared == 0
    assert sum(t[c].detected for c in IntensityClass) == gates.size
    with pytest.raises(EstimationError):
        tally(block, (1, 0, 1), detected_counts(codes), sample, own, peer)


def test_all_bases_matching_keeps_every_detection(pulses):
    gates, _ = _announce(pulses)
    idx = gates - pulses.start
    bases = np.where(pulses.basis[idx] < 0, 0, pulses.basis[idx]).astype(np.int8)
    codes = transmitter_match(pulses, gates, bases)
    assert np.all(codes & MATCH_FLAG)


def test_sample_size_is_ten_percent():
    n = 1000
    block = SiftedBlock(np.arange(n), np.zeros(n, np.int8), np.zeros(n, np.uint8),
                        np.zeros(n, np.int8))
    sample, key = sample_split(block, 0.1, bytes(32))
    assert sample.size == 100 and key.size == 900
