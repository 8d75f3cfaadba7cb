import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tdm_afe.model import AfeParams, fine_code_to_widths
from tdm_afe.montecarlo import edo_grid, sample_mismatch
from tdm_afe.servo import (DslState, EpcModel, Plant, calibrate_channel, calibrate_nth,
                           coarse_calibrate, coarse_correction, coarse_step_volts, epc_compare,
                           fine_calibrate, fine_correction, integrator_output, track)

P = AfeParams()
STEP = 3e-3


def test_coarse_step():
    assert coarse_step_volts(P) == pytest.approx(3.0e-3, rel=1e-12)
    assert 128 * coarse_step_volts(P) == pytest.approx(0.384, rel=1e-12)
    assert coarse_step_volts(replace(P, c_dslc_lsb=100e-15)) == pytest.approx(6e-3, rel=1e-12)


def test_epc_counts():
    m = EpcModel()
    assert epc_compare(90e-6, m) == (1, 10)
    assert epc_compare(135e-6, m) == (1, 6)
    assert epc_compare(-90e-6, m) == (-1, 10)
    assert epc_compare(0.0, m) == (1, m.n_max)


@given(a=st.floats(1e-9, 1), b=st.floats(1e-9, 1))
def test_epc_monotone_and_odd(a, b):
    m = EpcModel()
    lo, hi = sorted((a, b))
    assert epc_compare(lo, m)[1] >= epc_compare(hi, m)[1]
    sa, na = epc_compare(a, m)
    sb, nb = epc_compare(-a, m)
    assert sa == -sb and na == nb


def _exhaustive_coarse(edo, mm=None):
    # ties go to the smaller magnitude because candidates are ordered by |code|
    codes = sorted(range(-128, 129), key=abs)
    res = [abs(edo - coarse_correction(c, P, mm)) for c in codes]
    return codes[int(np.argmin(res))]


def _coarse(edo, mm=None):
    plant = Plant(P, edo, mm)
    return coarse_calibrate(0, plant, DslState(n_th=10)), plant


def test_coarse_examples():
    s, plant = _coarse(0.3)
    assert s.coarse_code == 100 and abs(plant.residual()) < 1e-12
    s, _ = _coarse(0.0)
    assert s.coarse_code == 0
    s, plant = _coarse(0.4)
    assert s.coarse_code == 128
    assert plant.residual() == pytest.approx(16e-3, abs=1e-12)
    assert "EDO out of range" in s.flags


def test_full_scale_edo_not_flagged():
    s, plant = _coarse(0.384)
    assert s.coarse_code == 128 and not s.flags


@pytest.mark.parametrize("edo", list(edo_grid()) + [1e-4, -1.4e-3, 0.2501, -0.38])
def test_coarse_matches_exhaustive(edo):
    s, plant = _coarse(float(edo))
    assert s.coarse_code == _exhaustive_coarse(edo)
    assert abs(plant.residual()) <= STEP
    assert s.comparisons <= 10


def test_nth_defaults_and_scaling():
    assert calibrate_nth(Plant(P, grounded=True)) == 10
    assert calibrate_nth(Plant(P, grounded=True), EpcModel(k_epc=1.8e-3)) in (19, 20, 21)
    with pytest.raises(RuntimeError):
        calibrate_nth(Plant(P, 0.1))


def test_nth_per_instance():
    counts = {calibrate_nth(Plant(P, mm=sample_mismatch(s), grounded=True)) for s in range(30)}
    assert len(counts) > 1


def _exhaustive_fine(residual):
    best = min(((abs(residual - s * c * P.fine_lsb), c) for c in range(151) for s in (1, -1)))
    return best[1]


@pytest.mark.parametrize("residual", [1.5e-3, -1.5e-3, 3.0e-3, 0.7e-3, 1e-5])
def test_fine_search(residual):
    plant = Plant(P, residual)
    s = fine_calibrate(0, plant, DslState(n_th=10))
    assert abs(plant.residual()) <= P.fine_lsb * (1 + 1e-9)
    assert abs(s.fine_code - _exhaustive_fine(residual)) <= 1
    assert not s.flags


def test_fine_zero_residual_exits_immediately():
    plant = Plant(P, 0.0)
    s = fine_calibrate(0, plant, DslState(n_th=10))
    assert s.fine_code == 0 and s.comparisons == 1


def test_fine_range_exhausted():
    plant = Plant(P, 0.02)
    s = fine_calibrate(0, plant, DslState(n_th=10), budget=1000)
    assert s.fine_code == 150 and "fine range exhausted" in s.flags


def test_full_calibration_sweep():
    for edo in edo_grid():
        _, rep = calibrate_channel(0, float(edo), P)
        assert abs(rep.residual_volts) <= 135e-6
        assert rep.comparisons_used <= 48
        assert not rep.flags


def test_fine_correction_mapping():
    w = fine_code_to_widths(17)
    assert fine_correction(w, 1, P) == pytest.approx(17 * 90e-6, rel=1e-12)
    assert fine_correction(w, -1, P) == pytest.approx(-17 * 90e-6, rel=1e-12)


def _calibrated(edo):
    state, _ = calibrate_channel(0, edo, P)
    return state


def test_track_steps_on_large_residual():
    state = _calibrated(0.0)
    plant = Plant(P, 200e-6)
    plant.codes = state.codes()
    new = track(0, plant, state, now=8.0)
    assert new.fine_code == 1 and new.fine_sign == 1 and new.phase == "tracking"


def test_track_holds_small_residual():
    state = _calibrated(0.0)
    plant = Plant(P, 30e-6)
    new = track(0, plant, state, now=8.0)
    assert new.fine_code == state.fine_code and new.last_sample_time == 8.0


def test_track_idle_between_samples():
    state = _calibrated(0.0)
    plant = Plant(P, 1e-3)
    before = plant.comparisons
    for now in np.arange(0.5, 8.0, 0.5):
        assert track(0, plant, state, now=float(now)) is state
    assert plant.comparisons == before


def test_tracking_stability_under_slow_drift():
    rate = 80e-6 / 8.0  # just under one fine LSB per sample interval
    # triangle wave of +-5 mV, inside the fine range, so coarse never re-runs
    edo = lambda t: 0.1 + rate * (250 - abs((t % 1000) - 500))
    state, _ = calibrate_channel(0, edo, P)
    plant = Plant(P, edo)
    plant.codes = state.codes()
    worst = 0.0
    for now in np.arange(8.0, 10_000.0 + 1, 8.0):
        state = track(0, plant, state, float(now))
        worst = max(worst, abs(plant.residual()))
    assert worst <= 2 * P.fine_lsb


def test_integrator_dc():
    fs = 4000.0
    tau = 1 / (2 * math.pi * 0.05)
    v = np.full(int(5 * tau * fs), 9e-3)
    assert integrator_output(v, fs) == pytest.approx(9e-3, rel=0.01)
    assert integrator_output(np.zeros(10), fs) == 0.0
    with pytest.raises(ValueError):
        integrator_output([], fs)


def test_integrator_rejects_10hz():
    fs = 400.0
    t = np.arange(int(60 * fs)) / fs
    from tdm_afe.servo import integrator_filter
    y = integrator_filter(10e-3 * np.sin(2 * np.pi * 10 * t), fs)
    tail = y[len(y) // 2:]
    ratio = (tail.max() - tail.min()) / 2 / 10e-3
    expected = 1 / math.sqrt(1 + (10 / 0.05) ** 2)
    assert 20 * math.log10(ratio) <= -46
    assert ratio == pytest.approx(expected, rel=0.05)
