import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tdm_afe.impedance import trim_ibl, z_tot
from tdm_afe.model import CDAC_UNITS, AfeParams, MismatchInstance
from tdm_afe.montecarlo import (Sigmas, batch_stats, edo_grid, run_batch, sample_mismatch)

P = AfeParams()


def test_zero_sigmas_give_zero_instance():
    mm = sample_mismatch(123, 0, 0, 0)
    zero = MismatchInstance.zero()
    for g in CDAC_UNITS:
        assert not mm.units(g).any() and not zero.units(g).any()
    assert not any(mm.switches(g).any() for g in mm.switch_charge_offsets)
    assert mm.epc_offset == 0


@given(seed=st.integers(0, 2**63))
@settings(max_examples=20)
def test_same_seed_same_instance(seed):
    assert sample_mismatch(seed) == sample_mismatch(seed)


def test_seeds_differ():
    assert sample_mismatch(1) != sample_mismatch(2)


def test_cap_sigma_law_of_large_numbers():
    draws = np.concatenate([sample_mismatch(s, 0.01).units("dslc") for s in range(80)])
    assert draws.size >= 10_000
    assert np.std(draws) == pytest.approx(0.01, rel=0.05)


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        sample_mismatch(0, -0.1)
    with pytest.raises(ValueError):
        Sigmas(cap=-1)


def test_instance_shapes():
    mm = sample_mismatch(0)
    for g, n in CDAC_UNITS.items():
        assert mm.units(g).shape == (n,)


def test_degenerate_batch():
    stats, rows = run_batch("impedance", 100, P, Sigmas(0, 0, 0))
    assert stats.min == stats.max
    assert stats.min == pytest.approx(z_tot(50.0, trim_ibl(P), P).z_tot, rel=1e-12)
    assert all(r.ok for r in rows)


def test_delta_n_study():
    stats, rows = run_batch("delta_n", 100, P)
    assert stats.min >= 1 and stats.n_failed == 0


def test_calibration_residual_study_small():
    stats, rows = run_batch("calibration_residual", 5, P, edos=edo_grid(25))
    assert stats.max <= 135e-6
    assert all("residual above bound" not in r.flags for r in rows)


def test_order_independence():
    a, ra = run_batch("impedance", 20, P, base_seed=4)
    b, rb = run_batch("impedance", 20, P, base_seed=4, order=list(reversed(range(20))))
    assert a == b
    assert [r.metric for r in ra] == [r.metric for r in rb]


def test_bad_order_and_study():
    with pytest.raises(ValueError):
        run_batch("impedance", 3, P, order=[0, 0, 1])
    with pytest.raises(ValueError):
        run_batch("bogus", 3, P)
    with pytest.raises(ValueError):
        run_batch("impedance", 0, P)


def test_parallel_matches_serial():
    a, _ = run_batch("impedance", 8, P, workers=1)
    b, _ = run_batch("impedance", 8, P, workers=2)
    assert a == b


@pytest.mark.parametrize("f", [1.0, 50.0])
def test_monotone_degradation(f):
    mins = [run_batch("impedance", 40, P, Sigmas(cap=s), frequency=f)[0].min
            for s in (0.01, 0.03, 0.1)]
    assert mins[0] >= mins[1] >= mins[2]


def test_failed_rows_are_recorded():
    # huge cap errors push the trim outside its range on some samples
    stats, rows = run_batch("calibration_residual", 3, P, Sigmas(cap=5.0), edos=[0.2])
    assert stats.n + stats.n_failed == 3
    assert all(r.ok or r.flags[0].startswith("error") for r in rows)


def test_batch_stats_order_free():
    v = np.random.default_rng(0).standard_normal(101)
    assert batch_stats(v) == batch_stats(v[::-1])
    s = batch_stats(v)
    assert s.min <= s.p5 <= s.p50 <= s.p95 <= s.max
    assert np.isnan(batch_stats([]).mean)
