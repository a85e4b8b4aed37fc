from __future__ import annotations

import csv

import numpy as np
import pytest

from droneqkd import rng
from droneqkd.core import IntensityClass, ProtocolParams
from droneqkd.transmitter import NO_VALUE, EmptyBlockError, generate_block, next_pulse

N = 400_000


@pytest.fixture(scope="module")
def block():
    pulses, sync = generate_block(rng.stream(1, "pulses"), ProtocolParams(), N, start_index=100)
    return pulses, sync


def test_class_frequencies_match_probabilities(block):
    pulses, _ = block
    counts = np.bincount(pulses.intensity, minlength=3)
    p = ProtocolParams().probabilities()
    expected = p * N
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert chi2 < 13.8  # 99.9 % quantile, 2 degrees of freedom


def test_photon_numbers_are_poisson_per_class(block):
    pulses, _ = block
    for cls, mu in ((IntensityClass.SIGNAL, 0.73), (IntensityClass.DECOY, 0.20)):
        n = pulses.photons[pulses.intensity == cls]
        assert abs(n.mean() - mu) < 5 * np.sqrt(mu / n.size)
        assert abs(n.var() - mu) < 0.02
    assert not pulses.photons[pulses.intensity == IntensityClass.VACUUM].any()


def test_vacuum_has_no_basis_or_bit(block):
    pulses, _ = block
    vac = pulses.intensity == IntensityClass.VACUUM
    assert np.all(pulses.basis[vac] == NO_VALUE) and np.all(pulses.bit[vac] == NO_VALUE)
    assert set(np.unique(pulses.basis[~vac])) == {0, 1}


def test_four_states_are_equiprobable(block):
    pulses, _ = block
    counts = pulses.state_counts()
    expected = counts.sum() / 4
    assert float(np.sum((counts - expected) ** 2 / expected)) < 16.3  # 99.9 %, 3 dof


def test_gate_indices_and_sync_companions(block):
    pulses, sync = block
    assert pulses.gate_index[0] == 100 and len(pulses) == len(sync) == N
    assert np.allclose(pulses.emit_time - pulses.gate_index * pulses.period, pulses.jitter)
    assert abs(np.std(sync.jitter) - 10e-12) < 0.1e-12
    r = pulses[5]
    assert r.gate_index == 105 and r.photon_count == pulses.photons[5]


def test_deterministic_for_a_seed():
    a, _ = generate_block(rng.stream(9, "pulses"), ProtocolParams(), 1000)
    b, _ = generate_block(rng.stream(9, "pulses"), ProtocolParams(), 1000)
    assert a.to_bytes() == b.to_bytes()


def test_pulse_csv(tmp_path):
    pulses, _ = generate_block(rng.stream(2, "pulses"), ProtocolParams(), 50)
    pulses.dump(tmp_path / "p.csv")
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows[0] == ["gate", "intensity", "basis", "bit", "photons"]
    assert len(rows) == 51
    for row, rec in zip(rows[1:], pulses.records()):
        assert row[1] == rec.intensity.name.lower()
        assert (row[2] == "") == (rec.intensity == IntensityClass.VACUUM)


def test_single_pulse_and_empty_block():
    r = next_pulse(rng.stream(3, "p"), ProtocolParams(), 42)
    assert r.gate_index == 42
    with pytest.raises(EmptyBlockError):
        generate_block(rng.stream(3, "p"), ProtocolParams(), 0)


def test_all_vacuum_source():
    params = ProtocolParams(p_signal="0", p_decoy="0", p_vacuum="1")
    pulses, _ = generate_block(rng.stream(4, "p"), params, 1000)
    assert np.all(pulses.intensity == IntensityClass.VACUUM) and not pulses.photons.any()


def test_single_gate_block_starts_at_zero():
    pulses, sync = generate_block(rng.stream(5, "p"), ProtocolParams(), 1)
    assert len(pulses) == 1 and pulses[0].gate_index == 0 and sync[0].gate_index == 0


def test_million_gate_statistics():
    pulses, _ = generate_block(rng.stream(6, "p"), ProtocolParams(), 10 ** 6)
    signal = pulses.intensity == IntensityClass.SIGNAL
    assert abs(signal.mean() - 0.5) <= 0.002
    n = pulses.photons[signal]
    assert abs(n.mean() - 0.73) <= 3 * np.sqrt(0.73 / n.size)
    counts = pulses.state_counts()
    expect = counts.sum() / 4
    assert np.all(np.abs(counts - expect) <= 3 * np.sqrt(expect * 0.75))
