"""Charge-domain transient simulation of the multiplexed signal chain.

One event per TDM slot: the slot's channel is sampled at the end of its
amplify window.  Between slots the amplifier's feedback state decays during
reset (``tau_settle``) and re-settles toward the new channel (``tau_amp``);
whatever is left over is the inter-channel crosstalk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import signal

from . import kernels
from .impedance import z_tot
from .model import (AfeParams, ChannelTrace, ConfigError, ElectrodeSource, MismatchInstance,
                    NoiseSpec, TrimCodes, sequence_codes, validate)
from .servo import coarse_correction, dsl_correction
from .stimuli import pipwm_frame, source_voltage

# octave-spaced poles of the flicker synthesiser
FLICKER_POLE_MIN = 0.05
FLICKER_POLE_MAX = 200.0


@dataclass(frozen=True)
class SimConfig:
    params: AfeParams = field(default_factory=AfeParams)
    source: Optional[ElectrodeSource] = None
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec(enabled=False))
    codes: object = field(default_factory=TrimCodes)  # TrimCodes or one per channel
    mm: MismatchInstance = field(default_factory=MismatchInstance.zero)
    duration: float = 1.0
    output_rate: Optional[float] = None  # per channel; defaults to the visit rate
    pwm_mode: str = "averaged"  # averaged | exact_edges

    def __post_init__(self):
        if self.source is None:
            object.__setattr__(self, "source", ElectrodeSource.grounded(self.params.n_channels))
        object.__setattr__(self, "codes", sequence_codes(self.codes, self.params.n_channels))
        if self.output_rate is None:
            object.__setattr__(self, "output_rate", self.params.visit_rate)

    def validated(self) -> "SimConfig":
        validate(self.params)
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if len(self.source.channels) != self.params.n_channels:
            raise ConfigError("source channel count must match n_channels")
        if self.output_rate > self.params.visit_rate * (1 + 1e-12):
            raise ConfigError("output_rate exceeds the per-channel visit rate")
        ratio = self.params.visit_rate / self.output_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("output_rate must divide the per-channel visit rate")
        if self.pwm_mode not in ("averaged", "exact_edges"):
            raise ConfigError(f"unknown pwm_mode {self.pwm_mode!r}")
        if self.n_slots < self.params.n_channels:
            raise ConfigError("duration shorter than one TDM frame")
        return self

    @property
    def n_slots(self) -> int:
        n = self.params.n_channels
        return int(math.floor(self.duration * self.params.f_m + 1e-9)) // n * n

    def with_source(self, ch: int, src) -> "SimConfig":
        return replace(self, source=self.source.replace_channel(ch, src))


@dataclass
class SimResult:
    traces: list
    clamped: np.ndarray  # per slot: amplifier output hit the rail
    ideal: np.ndarray  # per slot: unclamped amplifier output a0 * chop * v_eff
    backend: str


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------

def flicker_poles(lo: float = FLICKER_POLE_MIN, hi: float = FLICKER_POLE_MAX) -> np.ndarray:
    n = int(math.ceil(math.log2(hi / lo)))
    return lo * 2.0 ** np.arange(n + 1)


def noise_model_psd(f, spec: NoiseSpec) -> np.ndarray:
    """One-sided input-referred PSD (V^2/Hz) the synthesiser targets."""
    f = np.asarray(f, dtype=float)
    e2 = spec.white_floor ** 2
    out = np.full_like(f, e2)
    if spec.flicker_corner > 0:
        poles = flicker_poles()
        r = poles[1] / poles[0]
        for p in poles:
            amp = e2 * spec.flicker_corner * 2 * math.log(r) / (math.pi * p)
            out = out + amp / (1 + (f / p) ** 2)
    return out


def noise_sequence(n: int, fs: float, spec: NoiseSpec, channel: int) -> np.ndarray:
    """White plus 1/f noise built from first-order filtered white sources."""
    if not spec.enabled or n == 0:
        return np.zeros(n)
    rng = np.random.default_rng([spec.seed, channel])
    x = spec.white_floor * math.sqrt(fs / 2) * rng.standard_normal(n)
    if spec.flicker_corner > 0 and spec.white_floor > 0:
        poles = flicker_poles()
        r = poles[1] / poles[0]
        # every Lorentzian carries the same variance for a 1/f sum
        var = spec.white_floor ** 2 * spec.flicker_corner * math.log(r)
        for p in poles:
            a = math.exp(-2 * math.pi * p / fs)
            b = math.sqrt(var * (1 - a * a))
            w = rng.standard_normal(n)
            x0 = math.sqrt(var) * rng.standard_normal()
            y, _ = signal.lfilter([b], [1.0, -a], w, zi=[a * x0])
            x += y
    return x


# ---------------------------------------------------------------------------
# Transient
# ---------------------------------------------------------------------------

def attenuation(params: AfeParams, codes: TrimCodes, mm: MismatchInstance,
                z_electrode: float, f_dom: float) -> float:
    if z_electrode <= 0:
        return 1.0
    if f_dom > 0:
        z = z_tot(f_dom, codes, params, mm).z_tot
    else:
        # at DC the external capacitive branch is open
        z = z_tot(1.0, codes, params, mm).z_lna
    return z / (z + z_electrode)


def lpf_coefficients(params: AfeParams) -> tuple[float, float, float]:
    b, a = signal.butter(1, params.lpf_cutoff, fs=params.visit_rate)
    return float(b[0]), float(b[1]), float(a[1])


def _exact_fine(cfg: SimConfig, ch: int, t0: np.ndarray, t1: np.ndarray) -> np.ndarray:
    """Fine DSL correction from the PWM charge delivered inside each amplify window."""
    p = cfg.params
    codes = cfg.codes[ch]
    frame = pipwm_frame(codes.fine_widths, p)
    frac = frame.per_level_fraction(t0, t1)  # (5, n)
    units = cfg.mm.units("dslf")
    steps = p.pwm_steps
    return codes.fine_sign * p.fine_lsb * steps * ((1.0 + units) @ frac)


def simulate(cfg: SimConfig) -> SimResult:
    cfg.validated()
    p = cfg.params
    n_ch = p.n_channels
    n_slots = cfg.n_slots
    T = p.slot_time
    j = np.arange(n_slots)
    t_start = j * T
    t_sample = t_start + T
    t_active = t_start + (p.reset_fraction * T if p.reset_enabled else 0.0)
    chop = np.where((j // n_ch) % 2 == 0, 1, -1).astype(np.int8)

    v_eff = np.empty(n_slots)
    v_src = np.empty(n_slots)
    for ch in range(n_ch):
        sl = slice(ch, None, n_ch)
        codes = cfg.codes[ch]
        src = source_voltage(ch, t_sample[sl], cfg.source)
        chan = cfg.source.channels[ch]
        att = attenuation(p, codes, cfg.mm, chan.z_electrode, chan.dominant_frequency)
        if cfg.pwm_mode == "exact_edges":
            corr = (coarse_correction(codes.coarse_code, p, cfg.mm)
                    + _exact_fine(cfg, ch, t_active[sl], t_sample[sl]))
        else:
            corr = dsl_correction(codes, p, cfg.mm)
        noise = noise_sequence(n_slots // n_ch, p.visit_rate, cfg.noise, ch)
        v_src[sl] = src
        v_eff[sl] = att * src - corr + noise

    gain = p.closed_loop_gain
    t_amp = T * (1 - p.reset_fraction) if p.reset_enabled else T
    d_active = math.exp(-t_amp / p.tau_amp)
    d_reset = math.exp(-p.reset_fraction * T / p.tau_settle) if p.reset_enabled else 1.0
    b0, b1, a1 = lpf_coefficients(p)
    out, clamped = kernels.run_visits(np.ascontiguousarray(v_eff), chop, gain, d_active, d_reset,
                                      p.vdd / 2, b0, b1, a1, n_ch)

    step = int(round(p.visit_rate / cfg.output_rate))
    traces = []
    for ch in range(n_ch):
        sl = slice(ch, None, n_ch)
        traces.append(ChannelTrace(ch, t_sample[sl][::step].copy(), v_src[sl][::step].copy(),
                                   out[sl][::step].copy()))
    ideal = chop * gain * v_eff
    return SimResult(traces, clamped.astype(bool), ideal, kernels.BACKEND)


def run_transient(cfg: SimConfig) -> list[ChannelTrace]:
    return simulate(cfg).traces
