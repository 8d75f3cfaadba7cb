"""Periodic control waveforms (TDM, chopper, PI-PWM) and electrode inputs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import AfeParams, ChannelSource, ConfigError, ElectrodeSource


@dataclass(frozen=True)
class TdmPhase:
    kind: str  # "reset" or "channel"
    channel: int  # channel served by the slot (also set for its reset window)
    slot: int
    slot_start: float
    slot_end: float


def slot_index(t: float, params: AfeParams) -> int:
    # guard against t * f_m landing a hair below an integer
    return int(math.floor(t * params.f_m + 1e-9))


def tdm_phase_at(t: float, params: AfeParams, reset_fraction: float | None = None) -> TdmPhase:
    """Return the TDM phase that contains time ``t``.

    Slots of length 1/f_m visit channels 0..n-1 in turn; the leading
    ``reset_fraction`` of every slot is the reset phase, the rest amplifies
    the slot's channel.
    """
    if reset_fraction is None:
        reset_fraction = params.reset_fraction
    if t < 0:
        raise ValueError("t must be >= 0")
    if not 0 < reset_fraction < 0.5:
        raise ValueError("reset_fraction must lie in (0, 0.5)")
    j = slot_index(t, params)
    T = params.slot_time
    start = j * T
    split = start + reset_fraction * T
    ch = j % params.n_channels
    if t < split:
        return TdmPhase("reset", ch, j, start, split)
    return TdmPhase("channel", ch, j, split, start + T)


def visit_index(t: float, params: AfeParams) -> int:
    return slot_index(t, params) // params.n_channels


def chopper_sign(t: float, channel: int, params: AfeParams) -> int:
    """Chopper polarity seen by ``channel`` at time ``t``.

    The sign flips on every visit of the channel, starting at +1, so each
    channel is chopped by a 50%-duty square wave at f_ch.  Between visits the
    sign of the most recent visit holds; before a channel's first visit the
    square wave is extended backwards, so the sign is periodic for all t.
    """
    j = slot_index(t, params)
    # index of the visit of `channel` that is current at slot j (-1 before the first)
    v = (j - channel) // params.n_channels
    return 1 if v % 2 == 0 else -1


def chopper_period(params: AfeParams) -> float:
    return 1.0 / params.f_ch


# ---------------------------------------------------------------------------
# PI-PWM
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PiPwmFrame:
    widths: tuple[int, ...]
    t_pi: float
    pwm_step: float

    @property
    def steps(self) -> int:
        return int(round(self.t_pi / self.pwm_step))

    @property
    def offsets(self) -> tuple[float, ...]:
        return tuple(k * self.t_pi / 5 for k in range(5))

    @property
    def dc_fraction(self) -> float:
        return sum(self.widths) / (5 * self.steps)

    def level(self, k: int, t):
        """Binary level of waveform ``k`` at time(s) ``t``."""
        t = np.asarray(t, dtype=float)
        w = self.widths[k]
        if w == 0 or w == self.steps:
            return np.full_like(t, float(w > 0))
        phase = np.mod(t - self.offsets[k], self.t_pi)
        return (phase < w * self.pwm_step - 1e-15).astype(float)

    def summed(self, t):
        return sum(self.level(k, t) for k in range(5))

    def high_time(self, k: int, t):
        """Cumulative time waveform ``k`` has spent high on [0, t] (vectorised)."""
        t = np.asarray(t, dtype=float)
        w = self.widths[k] * self.pwm_step
        shifted = t - self.offsets[k]
        n = np.floor(shifted / self.t_pi)
        rem = shifted - n * self.t_pi
        # before the first rising edge shifted < 0; n=-1 and the sum below stays exact
        return (n + 1) * w + np.minimum(rem, w) - w

    def mean_level(self, t0, t1):
        """Average of the five levels over [t0, t1], weighted equally."""
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        span = t1 - t0
        acc = sum(self.high_time(k, t1) - self.high_time(k, t0) for k in range(5))
        return acc / (5 * span)

    def per_level_fraction(self, t0, t1):
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        span = t1 - t0
        return np.stack([(self.high_time(k, t1) - self.high_time(k, t0)) / span for k in range(5)])


def pipwm_frame(fine_widths, params: AfeParams) -> PiPwmFrame:
    steps = params.pwm_steps
    widths = tuple(int(w) for w in fine_widths)
    if len(widths) != 5:
        raise ConfigError("PI-PWM needs exactly five widths")
    for w in widths:
        if not 0 <= w <= steps:
            raise ConfigError(f"PWM width {w} outside 0..{steps}")
    return PiPwmFrame(widths, params.t_pi, params.pwm_step)


# ---------------------------------------------------------------------------
# Electrode sources
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _walk(seed: int, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=seed))
    return np.concatenate(([0.0], np.cumsum(rng.standard_normal(n))))


def drift(src: ChannelSource, t):
    """Gaussian random-walk offset, piecewise constant over ``drift_interval``."""
    t = np.asarray(t, dtype=float)
    if src.drift_step == 0:
        return np.zeros_like(t)
    idx = np.floor(t / src.drift_interval).astype(np.int64)
    n_needed = int(idx.max()) if idx.size else 0
    # round the cache size up so repeated calls reuse one walk
    n = 1 << max(10, n_needed.bit_length())
    return src.drift_step * _walk(src.drift_seed, n)[idx]


def source_voltage(ch: int, t, src: ElectrodeSource):
    if not 0 <= ch < len(src.channels):
        raise IndexError(f"channel {ch} out of range")
    c = src.channels[ch]
    return c.signal(t) + c.edo + drift(c, t)
