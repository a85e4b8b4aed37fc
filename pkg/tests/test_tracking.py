from __future__ import annotations

import csv

import numpy as np
import pytest

from droneqkd.tracking import (Sinusoid, TrackingConfig, TrackingError, UnstableLoopError,
                               cascade, cascade_stepwise, coupling_efficiency, disturbance,
                               is_stable, rms, run_tracking, sensitivity_gain)


def test_vectorized_cascade_equals_tick_by_tick_reference():
    cfg = TrackingConfig(white_sigma_x_um=1.5, white_sigma_y_um=0.7,
                         sinusoids=(Sinusoid(20.0, 3.0, "x"),))
    d = disturbance(cfg, 3000, 4)
    coarse, fine = cascade(cfg, d)
    coarse_ref, fine_ref = cascade_stepwise(cfg, d)
    assert np.allclose(coarse, coarse_ref, atol=1e-9)
    assert np.allclose(fine, fine_ref, atol=1e-9)


@pytest.mark.parametrize("kp, ki, stable", [
    (0.5, 0.02, True), (1.9, 0.1, True), (0.0, 0.0, True),
    (2.0, 0.0, False), (0.5, -0.1, False), (1.5, 1.2, False), (0.0, 0.1, False),
])
def test_jury_stability_region(kp, ki, stable):
    assert is_stable(kp, ki) is stable


def test_unstable_gains_are_rejected():
    with pytest.raises(UnstableLoopError):
        TrackingConfig(fine_kp=2.5)


def test_sinusoid_attenuation_matches_sensitivity():
    # pure fine loop (coarse disabled) driven by one tone
    f, rate = 5.0, 2000.0
    cfg = TrackingConfig(coarse_kp=0.0, coarse_ki=0.0, white_sigma_x_um=0.0,
                         white_sigma_y_um=0.0, sinusoids=(Sinusoid(100.0, f, "x"),))
    series = run_tracking(cfg, 20.0, 0)
    steady = series.error_x[series.error_x.size // 2:]
    amp = np.sqrt(2) * np.sqrt(np.mean(steady ** 2))
    assert amp == pytest.approx(100.0 * sensitivity_gain(0.5, 0.02, f, rate), rel=0.01)
    assert np.all(series.error_y == 0)


def test_closed_loop_beats_open_loop():
    cfg = TrackingConfig(white_sigma_x_um=2.0, white_sigma_y_um=2.0)
    closed = rms(run_tracking(cfg, 50.0, 3))
    opened = rms(run_tracking(cfg.open_loop(), 50.0, 3))
    assert closed[0] < opened[0] and closed[1] < opened[1]


def test_coupling_efficiency():
    assert coupling_efficiency(0.0, 2.5) == 1.0
    assert coupling_efficiency(2.5, 2.5) == pytest.approx(np.exp(-1))
    with pytest.raises(ValueError):
        coupling_efficiency(-1.0, 2.5)


def test_lock_loss_zeroes_coupling():
    cfg = TrackingConfig(coarse_kp=0.0, coarse_ki=0.0, fine_fov_um=1.0,
                         white_sigma_x_um=5.0, white_sigma_y_um=5.0)
    s = run_tracking(cfg, 5.0, 2)
    assert (~s.locked).any()
    assert np.all(s.coupling[~s.locked] == 0)


def test_series_window_and_csv(tmp_path):
    s = run_tracking(TrackingConfig(), 2.0, 1)
    assert len(s) == 4000 and s.rate == pytest.approx(2000.0)
    assert len(s.window(0.5, 1.0)) == 1000
    s.to_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["t_s", "err_x_um", "err_y_um", "coupling"] and len(rows) == 4001


def test_config_validation():
    with pytest.raises(TrackingError):
        TrackingConfig(loop_rate_fine=150.0)
    with pytest.raises(TrackingError):
        TrackingConfig(sinusoids=tuple(Sinusoid(1.0, 1.0) for _ in range(5)))
    with pytest.raises(TrackingError):
        run_tracking(TrackingConfig(), 0.0, 1)


def test_zero_disturbance_stays_at_zero():
    from droneqkd.tracking import LoopState, step_coarse, step_fine

    cfg = TrackingConfig()
    cs, fs = LoopState.coarse(cfg), LoopState.fine(cfg)
    for _ in range(100):
        cs, r, locked = step_coarse(cs, np.zeros(2))
        assert locked and not r.any()
        assert not step_fine(fs, r).any()


def test_proportional_loop_decays_geometrically():
    from droneqkd.tracking import LoopState

    k, d = 0.3, 10.0
    state = LoopState(k, 0.0)
    for n in range(30):
        e = state.step(np.array([d, -d]))
        assert e == pytest.approx([d * (1 - k) ** n, -d * (1 - k) ** n])


def test_high_frequency_tone_follows_frequency_response():
    f, rate = 300.0, 2000.0
    cfg = TrackingConfig(coarse_kp=0.0, coarse_ki=0.0, white_sigma_x_um=0.0,
                         white_sigma_y_um=0.0, sinusoids=(Sinusoid(10.0, f, "y"),))
    s = run_tracking(cfg, 10.0, 0)
    tail = s.error_y[s.error_y.size // 2:]
    amp = np.sqrt(2 * np.mean(tail ** 2))
    assert amp == pytest.approx(10.0 * sensitivity_gain(0.5, 0.02, f, rate), rel=0.10)


def test_disabled_fine_loop_passes_white_noise():
    from droneqkd.tracking import LoopState, step_fine

    x = np.random.default_rng(0).normal(0, 1.5, (2, 20_000))
    state = LoopState(0.0, 0.0)
    out = np.stack([step_fine(state, x[:, k]) for k in range(x.shape[1])], axis=1)
    assert np.array_equal(out, x)


def test_default_loop_reduces_rms_and_is_deterministic():
    cfg = TrackingConfig()
    closed = run_tracking(cfg, 10.0, 5)
    assert np.array_equal(closed.error_x, run_tracking(cfg, 10.0, 5).error_x)
    opened = run_tracking(cfg.open_loop(), 10.0, 5)
    assert rms(closed)[0] < rms(opened)[0]


def test_short_run_length():
    cfg = TrackingConfig(loop_rate_fine=10_000.0)
    assert len(run_tracking(cfg, 0.001, 1)) == 10


def test_rms_reference_cases():
    from droneqkd.tracking import PointingSeries

    def series(x):
        x = np.asarray(x, float)
        return PointingSeries(np.arange(x.size) * 1.0, x, x, np.ones(x.size),
                              np.ones(x.size, bool))

    assert rms(series([2.5] * 10)) == pytest.approx((2.5, 2.5))
    assert rms(series([3.0, -3.0] * 5)) == pytest.approx((3.0, 3.0))
    g = np.random.default_rng(1).standard_normal(10 ** 5)
    assert abs(rms(series(g))[0] - 1.0) <= 0.01


def test_coupling_at_drone_rms_offset():
    assert coupling_efficiency(3.97, 2.5) == pytest.approx(np.exp(-2.522), rel=1e-3)
    assert coupling_efficiency(3.97, 2.5) == pytest.approx(0.0803, abs=1e-4)
