"""Digital DC servo loop: coarse CDAC search, fine PI-PWM trim, EPC quantiser.

The loop is driven through a :class:`Plant`, a settled DC model of one
channel: the integrator output it presents to the comparator is the
amplified input residual, clamped at the rails, referred back to the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np
from scipy import signal

from .model import AfeParams, MismatchInstance, TrimCodes, fine_code_to_widths

TRACK_INTERVAL = 8.0  # s between EPC samples in operational mode
RESIDUAL_BOUND = 135e-6  # verified post-calibration residual bound (V, input-referred)
FINE_BUDGET = 40  # max EPC comparisons spent by the fine search


@dataclass(frozen=True)
class EpcModel:
    k_epc: float = 0.9e-3  # I_B / (2 g_m), volts
    n_max: int = 10000
    offset: float = 0.0

    def __post_init__(self):
        if self.k_epc <= 0:
            raise ValueError("k_epc must be positive")
        if self.n_max <= 0:
            raise ValueError("n_max must be positive")


def epc_compare(v_diff: float, model: EpcModel) -> tuple[int, int]:
    """Sign and oscillation count of the edge-pursuit comparator.

    The count falls as k_epc / |v|; it saturates at ``n_max`` for a null input.
    """
    v = v_diff + model.offset
    sign = 1 if v >= 0 else -1
    if v == 0:
        return sign, model.n_max
    # relative nudge so exact ratios such as 0.9 mV / 90 uV floor to 10, not 9
    n = math.floor(model.k_epc / abs(v) * (1 + 1e-12))
    return sign, min(n, model.n_max)


# ---------------------------------------------------------------------------
# DAC transfer functions
# ---------------------------------------------------------------------------

def coarse_step_volts(params: AfeParams) -> float:
    """Input-referred EDO suppressed per coarse LSB (differential rail drive)."""
    return 2 * params.vdd * params.c_dslc_lsb / params.c_in


def coarse_correction(code: int, params: AfeParams, mm: Optional[MismatchInstance] = None) -> float:
    mag = abs(code)
    if mag == 0:
        return 0.0
    units = (mm or MismatchInstance.zero()).units("dslc")
    return math.copysign(coarse_step_volts(params) * float(np.sum(1.0 + units[:mag])), code)


def fine_correction(widths, sign: int, params: AfeParams,
                    mm: Optional[MismatchInstance] = None) -> float:
    units = (mm or MismatchInstance.zero()).units("dslf")
    w = np.asarray(widths, dtype=float)
    return sign * params.fine_lsb * float(np.dot(w, 1.0 + units))


def dsl_correction(codes: TrimCodes, params: AfeParams,
                   mm: Optional[MismatchInstance] = None) -> float:
    return (coarse_correction(codes.coarse_code, params, mm)
            + fine_correction(codes.fine_widths, codes.fine_sign, params, mm))


# ---------------------------------------------------------------------------
# Plant
# ---------------------------------------------------------------------------

class Plant:
    """Settled DC model of one channel as seen by the servo."""

    def __init__(self, params: AfeParams, edo: Union[float, Callable[[float], float]] = 0.0,
                 mm: Optional[MismatchInstance] = None, model: Optional[EpcModel] = None,
                 grounded: bool = False):
        self.params = params
        self.edo = edo
        self.mm = mm or MismatchInstance.zero()
        self.model = model or EpcModel(offset=self.mm.epc_offset)
        self.grounded = grounded
        self.codes = TrimCodes()
        self.now = 0.0
        self.comparisons = 0
        self._step = coarse_step_volts(params)
        self._half = 0.0  # mid-tread offset, active only during the coarse search

    def input_dc(self) -> float:
        if self.grounded:
            return 0.0
        return self.edo(self.now) if callable(self.edo) else float(self.edo)

    def residual(self) -> float:
        """True input-referred residual EDO."""
        return self.input_dc() - dsl_correction(self.codes, self.params, self.mm)

    def sensed(self) -> float:
        """Integrator output presented to the EPC, referred to the input."""
        g = self.params.closed_loop_gain
        lim = self.params.vdd / 2
        return float(np.clip(g * (self.residual() + self._half), -lim, lim) / g)

    def compare(self) -> tuple[int, int]:
        self.comparisons += 1
        return epc_compare(self.sensed(), self.model)


# ---------------------------------------------------------------------------
# Calibration state machine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DslState:
    coarse_code: int = 0
    fine_code: int = 0
    fine_sign: int = 1
    n_th: int = 0
    last_sample_time: float = 0.0
    phase: str = "uncalibrated"  # uncalibrated | calibrated | tracking
    comparisons: int = 0
    flags: tuple[str, ...] = ()
    log: tuple = ()

    @property
    def fine_widths(self) -> tuple[int, ...]:
        return fine_code_to_widths(self.fine_code)

    def codes(self, base: Optional[TrimCodes] = None) -> TrimCodes:
        base = base or TrimCodes()
        return replace(base, coarse_code=self.coarse_code,
                       fine_widths=self.fine_widths, fine_sign=self.fine_sign)


def _apply(plant: Plant, state: DslState) -> None:
    plant.codes = state.codes(plant.codes)


def calibrate_nth(plant: Plant, model: Optional[EpcModel] = None) -> int:
    """EPC count for a deliberate one-fine-LSB disturbance on grounded inputs.

    The disturbance is applied with both drive polarities and the larger count
    is kept, so a comparator offset tightens rather than loosens the threshold.
    """
    if not plant.grounded:
        raise RuntimeError("N_TH extraction needs the AFE inputs grounded")
    if model is not None:
        plant.model = model
    saved = plant.codes
    counts = []
    for sign in (1, -1):
        plant.codes = TrimCodes().with_fine(1, sign)
        counts.append(plant.compare()[1])
    plant.codes = saved
    return max(1, max(counts))


def coarse_calibrate(channel: int, plant: Plant, state: DslState) -> DslState:
    """Mid-tread successive approximation over sign + 7 magnitude bits.

    Each magnitude decision compares the residual against half a coarse LSB,
    so the result is the nearest code rather than the floor.
    """
    state = replace(state, fine_code=0, fine_sign=1, coarse_code=0)
    _apply(plant, state)
    start = plant.comparisons
    log = list(state.log)
    flags = list(state.flags)
    half = 0.5 * plant._step

    sign, _ = plant.compare()
    log.append(("coarse", 0, sign))

    def wants_more(mag: int) -> bool:
        # residual beyond the midpoint between codes mag-1 and mag keeps the bit
        plant.codes = replace(plant.codes, coarse_code=sign * mag)
        plant._half = sign * half
        try:
            s, _ = plant.compare()
        finally:
            plant._half = 0.0
        log.append(("coarse", sign * mag, s))
        return s == sign

    mag = 0
    for bit in range(6, -1, -1):
        trial = mag | (1 << bit)
        if wants_more(trial):
            mag = trial
    if mag == 127 and wants_more(128):
        mag = 128
        plant.codes = replace(plant.codes, coarse_code=sign * 128)
        plant._half = -sign * half
        try:
            s, _ = plant.compare()
        finally:
            plant._half = 0.0
        log.append(("coarse-overflow", sign * 128, s))
        if s == sign:
            flags.append("EDO out of range")

    state = replace(state, coarse_code=sign * mag,
                    comparisons=state.comparisons + plant.comparisons - start,
                    flags=tuple(flags), log=tuple(log))
    _apply(plant, state)
    return state


def _fine_step(state: DslState, sign: int, max_code: int) -> Optional[DslState]:
    """Move the fine correction one LSB toward a residual of sign ``sign``."""
    code, pol = state.fine_code, state.fine_sign
    if code == 0:
        return replace(state, fine_code=1, fine_sign=sign)
    if sign == pol:
        if code >= max_code:
            return None
        return replace(state, fine_code=code + 1)
    return replace(state, fine_code=code - 1)


def fine_calibrate(channel: int, plant: Plant, state: DslState,
                   budget: int = FINE_BUDGET) -> DslState:
    """Step the fine code one LSB at a time until the EPC count reaches N_TH."""
    if state.n_th < 1:
        raise RuntimeError("N_TH must be calibrated before the fine search")
    _apply(plant, state)
    start = plant.comparisons
    log = list(state.log)
    flags = list(state.flags)
    max_code = plant.params.fine_max_code
    while True:
        if plant.comparisons - start >= budget:
            flags.append("fine budget exhausted")
            break
        sign, n = plant.compare()
        log.append(("fine", state.fine_sign * state.fine_code, sign, n))
        if n >= state.n_th:
            break
        nxt = _fine_step(state, sign, max_code)
        if nxt is None:
            flags.append("fine range exhausted")
            break
        state = nxt
        _apply(plant, state)
    state = replace(state, phase="calibrated", last_sample_time=plant.now,
                    comparisons=state.comparisons + plant.comparisons - start,
                    flags=tuple(flags), log=tuple(log))
    _apply(plant, state)
    return state


def track(channel: int, plant: Plant, state: DslState, now: float,
          interval: float = TRACK_INTERVAL) -> DslState:
    """Operational-mode update: one EPC sample every ``interval`` seconds."""
    if state.phase not in ("calibrated", "tracking"):
        raise RuntimeError("channel must be calibrated before tracking")
    if now - state.last_sample_time < interval:
        return state
    plant.now = now
    _apply(plant, state)
    sign, n = plant.compare()
    new = replace(state, last_sample_time=now, phase="tracking",
                  comparisons=state.comparisons + 1)
    if n < state.n_th:
        stepped = _fine_step(new, sign, plant.params.fine_max_code)
        if stepped is not None:
            new = stepped
    _apply(plant, new)
    return new


# ---------------------------------------------------------------------------
# Integrator
# ---------------------------------------------------------------------------

def integrator_filter(v_out, fs: float, cutoff: float = 0.05) -> np.ndarray:
    b, a = signal.butter(1, cutoff, fs=fs)
    return signal.lfilter(b, a, np.asarray(v_out, dtype=float))


def integrator_output(v_out, fs: float, cutoff: float = 0.05) -> float:
    """DC estimate at the end of ``v_out`` after the 50 mHz integrator."""
    v = np.asarray(v_out, dtype=float)
    if v.size == 0:
        raise ValueError("empty trace")
    return float(integrator_filter(v, fs, cutoff)[-1])


# ---------------------------------------------------------------------------
# Whole-channel calibration
# ---------------------------------------------------------------------------

@dataclass
class CalReport:
    channel: int
    coarse_code: int
    fine_code: int
    fine_sign: int
    fine_widths: list
    n_th: int
    residual_volts: float
    comparisons_used: int
    flags: list = field(default_factory=list)
    iterations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "channel": self.channel,
            "coarse_code": self.coarse_code,
            "fine_code": self.fine_code,
            "fine_sign": self.fine_sign,
            "fine_widths": list(self.fine_widths),
            "n_th": self.n_th,
            "residual_volts": self.residual_volts,
            "comparisons_used": self.comparisons_used,
            "flags": list(self.flags),
            "iterations": [list(x) for x in self.iterations],
        }


def chip_nth(params: AfeParams, mm: Optional[MismatchInstance] = None,
             model: Optional[EpcModel] = None) -> int:
    mm = mm or MismatchInstance.zero()
    plant = Plant(params, 0.0, mm, model, grounded=True)
    return calibrate_nth(plant)


def calibrate_channel(channel: int, edo, params: AfeParams,
                      mm: Optional[MismatchInstance] = None,
                      model: Optional[EpcModel] = None,
                      n_th: Optional[int] = None) -> tuple[DslState, CalReport]:
    mm = mm or MismatchInstance.zero()
    if n_th is None:
        n_th = chip_nth(params, mm, model)
    plant = Plant(params, edo, mm, model)
    state = DslState(n_th=n_th)
    state = coarse_calibrate(channel, plant, state)
    state = fine_calibrate(channel, plant, state)
    report = CalReport(
        channel=channel,
        coarse_code=state.coarse_code,
        fine_code=state.fine_code,
        fine_sign=state.fine_sign,
        fine_widths=list(state.fine_widths),
        n_th=n_th,
        residual_volts=plant.residual(),
        comparisons_used=state.comparisons,
        flags=list(state.flags),
        iterations=list(state.log),
    )
    return state, report
