"""Measurements on simulated traces: gain, PSD / IRN, crosstalk, input impedance."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal

from .engine import SimConfig, run_transient
from .impedance import c_epf, c_ipfc, external_residual, internal_residual
from .model import ChannelSource, ChannelTrace

CROSSTALK_FLOOR_DB = -200.0
DEFAULT_TEST_AMPLITUDE = 1e-3


def tone_phasor(x, t, f: float) -> complex:
    """Single-bin DFT amplitude phasor of ``x`` at ``f`` (peak units)."""
    x = np.asarray(x, dtype=float)
    return 2.0 * np.sum(x * np.exp(-2j * np.pi * f * np.asarray(t))) / len(x)


def _whole_periods(trace: ChannelTrace, f: float, skip_periods: int = 1) -> slice:
    """Tail of the trace spanning an integer number of periods of ``f``."""
    fs = trace.sample_rate
    duration = len(trace) / fs
    periods = int(math.floor(duration * f + 1e-9)) - skip_periods
    n = int(round(periods * fs / f))
    return slice(len(trace) - n, len(trace))


def _check_periods(cfg: SimConfig, f: float) -> None:
    if cfg.duration * f < 10 - 1e-9:
        raise ValueError(f"duration covers fewer than 10 periods of {f} Hz")


def _quiet(cfg: SimConfig) -> SimConfig:
    return replace(cfg, noise=replace(cfg.noise, enabled=False))


def measure_gain(cfg: SimConfig, f_test: float, channel: int = 0,
                 amplitude: float = DEFAULT_TEST_AMPLITUDE) -> float:
    """Closed-loop gain in dB at ``f_test`` from a noiseless sine run."""
    _check_periods(cfg, f_test)
    old = cfg.source.channels[channel]
    tone = replace(old, kind="sine", amplitude=amplitude, frequency=f_test, path=None)
    traces = run_transient(_quiet(cfg).with_source(channel, tone))
    tr = traces[channel]
    sl = _whole_periods(tr, f_test)
    x = tone_phasor(tr.v_in[sl], tr.time[sl], f_test)
    y = tone_phasor(tr.v_out[sl], tr.time[sl], f_test)
    return 20 * math.log10(abs(y) / abs(x))


@dataclass
class PsdEstimate:
    frequencies: np.ndarray
    density: np.ndarray
    segment_length: int
    n_segments: int


def default_segment_length(n: int, fs: float, min_segments: int = 8) -> int:
    # longest power-of-two segment giving >= min_segments half-overlapped
    # segments, and no finer than 1/8 Hz resolution
    limit = min(2 * n / (min_segments + 1), 8 * fs)
    if limit < 16:
        raise ValueError("trace too short for a PSD estimate")
    return 1 << int(math.floor(math.log2(limit)))


def estimate_psd(trace, fs: float | None = None, segment_length: int | None = None,
                 gain: float = 1.0) -> PsdEstimate:
    """Welch estimate: Hann segments, 50% overlap, one-sided density.

    ``gain`` (linear) input-refers the result: the density is divided by gain**2.
    """
    if isinstance(trace, ChannelTrace):
        x = trace.v_out
        fs = trace.sample_rate
    else:
        x = np.asarray(trace, dtype=float)
        if fs is None:
            raise ValueError("fs required for a bare array")
    n = len(x)
    nseg = segment_length or default_segment_length(n, fs)
    step = nseg // 2
    count = 1 + (n - nseg) // step if n >= nseg else 0
    if count < 8:
        raise ValueError("trace too short: fewer than 8 segments")
    f, pxx = signal.welch(x, fs=fs, window="hann", nperseg=nseg, noverlap=nseg - step,
                          detrend="constant", scaling="density", return_onesided=True)
    return PsdEstimate(f, pxx / gain ** 2, nseg, count)


def band_power(psd: PsdEstimate, f_lo: float, f_hi: float) -> float:
    f = psd.frequencies
    df = f[1] - f[0]
    mask = (f >= f_lo) & (f <= f_hi)
    return float(np.sum(psd.density[mask]) * df)


@dataclass
class IrnResult:
    irn_vrms: float
    band_hz: tuple
    gain_db: float
    psd: PsdEstimate


def measure_irn(cfg: SimConfig, channel: int = 0, band=(0.5, 100.0),
                segment_length: int | None = None) -> IrnResult:
    """Input-referred rms noise over ``band`` from a zero-signal run."""
    quiet_src = replace(cfg.source.channels[channel], kind="constant", amplitude=0.0, path=None)
    cfg = cfg.with_source(channel, quiet_src)
    g_cfg = replace(cfg, duration=max(1.0, 10 / 10.0))
    gain_db = measure_gain(g_cfg, 10.0, channel)
    gain = 10 ** (gain_db / 20)
    if not cfg.noise.enabled:
        return IrnResult(0.0, tuple(band), gain_db, None)
    tr = run_transient(cfg)[channel]
    psd = estimate_psd(tr, segment_length=segment_length, gain=gain)
    return IrnResult(math.sqrt(band_power(psd, *band)), tuple(band), gain_db, psd)


def measure_crosstalk(cfg: SimConfig, aggressor: int, victim: int, f_test: float = 10.0,
                      amplitude: float = DEFAULT_TEST_AMPLITUDE) -> float:
    """Victim-to-aggressor output amplitude ratio in dB at ``f_test``."""
    if aggressor == victim:
        raise ValueError("aggressor and victim must differ")
    _check_periods(cfg, f_test)
    tone = ChannelSource(kind="sine", amplitude=amplitude, frequency=f_test)
    cfg = _quiet(cfg).with_source(aggressor, tone).with_source(victim, ChannelSource())
    traces = run_transient(cfg)
    a, v = traces[aggressor], traces[victim]
    sl = _whole_periods(a, f_test)
    amp_a = abs(tone_phasor(a.v_out[sl], a.time[sl], f_test))
    amp_v = abs(tone_phasor(v.v_out[sl], v.time[sl], f_test))
    if amp_a == 0 or amp_v == 0:
        return CROSSTALK_FLOOR_DB
    return max(CROSSTALK_FLOOR_DB, 20 * math.log10(amp_v / amp_a))


@dataclass
class ImpedanceMeasurement:
    z: float  # magnitude-combined, matches the closed-form convention
    z_lna: float
    z_ext: float
    z_phasor: float  # |V| / |I_lna + I_ext| with branch phases kept
    f: float


def measure_input_impedance_detail(cfg: SimConfig, f_test: float, channel: int = 0,
                                   amplitude: float = DEFAULT_TEST_AMPLITUDE,
                                   periods: int = 10) -> ImpedanceMeasurement:
    """Drive an ideal sine and sum the input charge moved at every event.

    Each visit of the channel is one chopper transition: the net internal
    capacitance moves ``C_int * v`` of charge.  The external residual
    capacitance moves ``C_ext * dv`` between visits.
    """
    p = cfg.params
    codes = cfg.codes[channel]
    r_int = internal_residual(c_ipfc(codes.ipfc_code, p, cfg.mm), p)
    r_ext = external_residual(c_epf(codes.epf_code, p, cfg.mm), p)
    dt = 1.0 / p.visit_rate
    n = int(round(periods / f_test / dt))
    k = np.arange(n + 1)
    t_visit = (channel + 1) * p.slot_time + k * dt
    v = amplitude * np.sin(2 * np.pi * f_test * t_visit)
    q_int = r_int * v[1:]
    q_ext = r_ext * np.diff(v)
    t = t_visit[1:]
    i_int = tone_phasor(q_int / dt, t, f_test)
    i_ext = tone_phasor(q_ext / dt, t, f_test)
    vv = tone_phasor(v[1:], t, f_test)
    cap = p.z_cap

    def z_of(i):
        return cap if abs(i) <= abs(vv) / cap else abs(vv) / abs(i)

    return ImpedanceMeasurement(
        z=z_of(abs(i_int) + abs(i_ext)),
        z_lna=z_of(i_int),
        z_ext=z_of(i_ext),
        z_phasor=z_of(i_int + i_ext),
        f=f_test,
    )


def measure_input_impedance(cfg: SimConfig, f_test: float, channel: int = 0) -> float:
    return measure_input_impedance_detail(cfg, f_test, channel).z
