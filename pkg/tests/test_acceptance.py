"""End-to-end acceptance checks, one per criterion.

Each check returns ``(ok, detail)``.  Under pytest every result is recorded
and a PASS/FAIL line per criterion is printed in the terminal summary (see
conftest.py); ``python3 tests/test_acceptance.py`` prints the same lines.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from tdm_afe.engine import SimConfig
from tdm_afe.impedance import trim_ibl, z_lna_bound, z_tot
from tdm_afe.measure import measure_crosstalk, measure_gain, measure_input_impedance, measure_irn
from tdm_afe.model import AfeParams, ChannelSource, ElectrodeSource, NoiseSpec
from tdm_afe.montecarlo import edo_grid, run_batch, sample_mismatch
from tdm_afe.servo import (DslState, Plant, calibrate_channel, chip_nth, coarse_calibrate,
                           coarse_correction)
from tdm_afe.stimuli import pipwm_frame

P = AfeParams()
RESULTS = {}


def c1_gain():
    g = measure_gain(SimConfig(codes=trim_ibl(P), duration=1.0), 10.0)
    return abs(g - 40.0) <= 0.2, f"gain {g:.3f} dB (40 +/- 0.2)"


def c2_closed_form():
    zb = z_lna_bound("two_stage", P)
    ext = z_tot(50.0, None, P).z_ext_branch
    ok = math.isclose(zb, 100e9, rel_tol=1e-12) and abs(ext / 12.86e9 - 1) <= 1e-3
    return ok, f"Z_LNA {zb / 1e9:.6f} GOhm, ext branch @50 Hz {ext / 1e9:.4f} GOhm"


def c3_cross_validation():
    worst = 0.0
    for seed in range(5):
        mm = sample_mismatch(seed)
        codes = trim_ibl(P, mm)
        cfg = SimConfig(codes=codes, mm=mm)
        for f in (1.0, 50.0):
            closed = z_tot(f, codes, P, mm).z_tot
            worst = max(worst, abs(measure_input_impedance(cfg, f) / closed - 1))
    return worst <= 0.2, f"worst transient/closed-form mismatch {worst:.2%} (<= 20%)"


def c4_coarse():
    worst, mismatched = 0.0, 0
    for edo in edo_grid():
        plant = Plant(P, float(edo))
        s = coarse_calibrate(0, plant, DslState(n_th=10))
        codes = sorted(range(-128, 129), key=abs)
        best = codes[int(np.argmin([abs(edo - coarse_correction(c, P)) for c in codes]))]
        mismatched += s.coarse_code != best
        worst = max(worst, abs(plant.residual()))
    ok = worst <= 3e-3 + 1e-15 and mismatched == 0
    return ok, f"worst coarse residual {worst * 1e3:.3f} mV, {mismatched} oracle mismatches"


def c5_full_dsl():
    worst, most = 0.0, 0
    for edo in edo_grid():
        _, rep = calibrate_channel(0, float(edo), P)
        worst = max(worst, abs(rep.residual_volts))
        most = max(most, rep.comparisons_used)
    ok = worst <= 135e-6 and most <= 48
    return ok, f"worst residual {worst * 1e6:.1f} uV, max comparisons {most}"


def c6_delta_n():
    stats, _ = run_batch("delta_n", 100, P)
    return stats.min >= 1 and stats.n_failed == 0, f"min delta N {stats.min:g} over {stats.n}"


def c7_irn():
    edo = 0.384
    n_th = chip_nth(P)
    codes = [calibrate_channel(ch, edo, P, n_th=n_th)[0].codes(trim_ibl(P)) for ch in range(4)]
    src = ElectrodeSource(tuple(ChannelSource(edo=edo) for _ in range(4)))
    cfg = SimConfig(source=src, codes=codes, noise=NoiseSpec(seed=0), duration=400.0)
    irn = measure_irn(cfg).irn_vrms
    return abs(irn / 0.27e-6 - 1) <= 0.15, f"IRN {irn * 1e6:.4f} uVrms (0.27 +/- 15%)"


def c8_pwm_harmonics():
    worst = -np.inf
    for w in (1, 7, 13, 22, 29):
        frame = pipwm_frame((w,) * 5, P)
        n = 1500 * 8
        t = (np.arange(n) + 0.5) * P.t_pi / n
        spec = np.abs(np.fft.rfft(frame.summed(t))) / n
        # exact cancellation would give log(0); floor at double precision of the DC term
        floor = np.finfo(float).eps * spec[0]
        rel = 20 * np.log10(max(spec[1:5].max(), floor) / spec[5])
        worst = max(worst, rel)
    return worst <= -90, f"harmonics 1-4 at most {worst:.1f} dB relative to harmonic 5"


def c9_crosstalk():
    cfg = SimConfig(codes=trim_ibl(P), duration=1.0)
    on = measure_crosstalk(cfg, 0, 1, 10.0)
    off = measure_crosstalk(replace(cfg, params=replace(P, reset_enabled=False)), 0, 1, 10.0)
    return on < off and on <= -40, f"with reset {on:.1f} dB, without {off:.1f} dB"


def c10_montecarlo():
    s50, _ = run_batch("impedance", 100, P, frequency=50.0)
    s1, _ = run_batch("impedance", 100, P, frequency=1.0)
    ok = s50.min >= 6.4e9 and s1.min >= 74.5e9
    return ok, f"min {s50.min / 1e9:.2f} GOhm @50 Hz, {s1.min / 1e9:.2f} GOhm @1 Hz"


CRITERIA = [
    (1, "gain at 10 Hz", c1_gain, 5),
    (2, "closed-form impedance", c2_closed_form, 1),
    (3, "transient vs closed-form impedance", c3_cross_validation, 120),
    (4, "coarse DSL sweep", c4_coarse, 30),
    (5, "full DSL sweep", c5_full_dsl, 60),
    (6, "EPC delta N batch", c6_delta_n, 30),
    (7, "input-referred noise, 400 s at 384 mV EDO", c7_irn, 120),
    (8, "PI-PWM harmonic suppression", c8_pwm_harmonics, 5),
    (9, "crosstalk ordering", c9_crosstalk, 30),
    (10, "Monte-Carlo impedance minima", c10_montecarlo, 300),
]


def evaluate(number, fn):
    t0 = time.perf_counter()
    ok, detail = fn()
    elapsed = time.perf_counter() - t0
    return bool(ok), detail, elapsed


def line(number, name, ok, detail, elapsed, limit):
    return f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail} [{elapsed:.1f} s, limit {limit} s]"


@pytest.mark.parametrize("number,name,fn,limit", CRITERIA, ids=[f"c{c[0]}" for c in CRITERIA])
def test_criterion(number, name, fn, limit):
    ok, detail, elapsed = evaluate(number, fn)
    RESULTS[number] = (ok, detail, elapsed, name, limit)
    assert ok, detail
    assert elapsed < limit, f"took {elapsed:.1f} s"


if __name__ == "__main__":
    for number, name, fn, limit in CRITERIA:
        ok, detail, elapsed = evaluate(number, fn)
        print(line(number, name, ok, detail, elapsed, limit), flush=True)
