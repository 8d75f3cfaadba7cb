"""Domain types shared by every part of the simulator.

All physical quantities are SI floats (farads, hertz, volts, seconds, ohms);
digital control words are plain ints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np


class ConfigError(ValueError):
    """Raised when a parameter set or configuration violates an invariant."""


# ---------------------------------------------------------------------------
# Architecture parameters
# ---------------------------------------------------------------------------

_C_IN = 40e-12
_A0 = 100.0
_C_IPFC_LSB = 5e-15
# Fixed IBL feedback cap: 31.5 sink-CDAC LSBs of over-compensation, i.e. the
# middle of the 6-bit C_IPFC range, which leaves a half-LSB residual nominally.
_C_IPF = (_C_IN + 31.5 * _C_IPFC_LSB) / (_A0 - 1.0)


@dataclass(frozen=True)
class AfeParams:
    c_in: float = _C_IN  # input capacitor (F)
    c_fb: float = 0.4e-12  # feedback capacitor (F)
    c_ext: float = 10e-12  # lumped pad + interconnect parasitic (F)
    c_ipf: float = _C_IPF  # fixed, over-sized internal positive-feedback cap (F)
    c_ipf_lsb: float = 5e-15  # LSB of a trimmable C_IPF (single-stage IBL bound only)
    c_ipfc_lsb: float = _C_IPFC_LSB  # 6-bit internal sink CDAC LSB (F)
    c_epf_lsb: float = 5e-15  # 6-bit external IBL CDAC LSB (F)
    c_dslc_lsb: float = 50e-15  # 7-bit coarse DSL CDAC LSB (F)
    c_dslf_unit: float = 10e-15  # fine DSL unit capacitor (F)
    a0: float = _A0  # closed-loop gain (V/V)
    f_ch: float = 2000.0  # chopper frequency (Hz)
    f_m: float = 16000.0  # TDM multiplexing frequency (Hz)
    n_channels: int = 4
    vdd: float = 1.2  # supply (V)
    t_pi: float = 1.5e-6  # PI-PWM period (s)
    pwm_step: float = 50e-9  # PI-PWM pulse-width step (s)
    lpf_cutoff: float = 200.0  # LNA intrinsic first-order low-pass (Hz)
    fine_lsb: float = 90e-6  # input-referred EDO suppressed per fine DSL LSB (V)
    reset_fraction: float = 0.1  # leading share of each TDM slot spent in reset
    tau_settle: float = 5e-6  # feedback-state discharge time constant during reset (s)
    tau_amp: float = 10e-6  # closed-loop settling time constant while amplifying (s)
    reset_enabled: bool = True
    int_ibl: bool = True  # internal IBL (C_IPF + C_IPFC) present
    ext_ibl: bool = True  # external IBL (C_EPF) present
    z_cap: float = 1e15  # reported impedance when a residual cancels exactly (ohm)

    @property
    def slot_time(self) -> float:
        return 1.0 / self.f_m

    @property
    def visit_rate(self) -> float:
        """Per-channel visit rate, equal to 2 * f_ch at defaults."""
        return self.f_m / self.n_channels

    @property
    def pwm_steps(self) -> int:
        return int(round(self.t_pi / self.pwm_step))

    @property
    def fine_max_code(self) -> int:
        return 5 * self.pwm_steps

    @property
    def closed_loop_gain(self) -> float:
        return self.c_in / self.c_fb


_CAPS = ("c_in", "c_fb", "c_ext", "c_ipf", "c_ipf_lsb", "c_ipfc_lsb",
         "c_epf_lsb", "c_dslc_lsb", "c_dslf_unit")
_FREQS = ("f_ch", "f_m", "lpf_cutoff")


def validate(params: AfeParams) -> AfeParams:
    """Return ``params`` unchanged, or raise ConfigError naming the first broken invariant."""
    for name in _CAPS:
        if not getattr(params, name) > 0:
            raise ConfigError(f"{name}: capacitance must be positive")
    for name in _FREQS:
        if not getattr(params, name) > 0:
            raise ConfigError(f"{name}: frequency must be positive")
    if params.n_channels < 1:
        raise ConfigError("n_channels must be at least 1")
    if not math.isclose(params.f_m, params.n_channels * 2.0 * params.f_ch, rel_tol=1e-9):
        raise ConfigError("f_m must equal n_channels * 2 * f_ch")
    if params.a0 <= 1:
        raise ConfigError("a0 must exceed 1")
    if abs(params.a0 - params.c_in / params.c_fb) > 0.01 * params.a0:
        raise ConfigError("a0 must match c_in / c_fb within 1%")
    if not (params.t_pi > 0 and params.pwm_step > 0):
        raise ConfigError("t_pi and pwm_step must be positive")
    ratio = params.t_pi / params.pwm_step
    if abs(ratio - round(ratio)) > 1e-6 * ratio:
        raise ConfigError("t_pi not an integer multiple of pwm_step")
    if params.vdd <= 0:
        raise ConfigError("vdd must be positive")
    if params.fine_lsb <= 0:
        raise ConfigError("fine_lsb must be positive")
    if not 0 < params.reset_fraction < 0.5:
        raise ConfigError("reset_fraction must lie in (0, 0.5)")
    if params.tau_settle <= 0 or params.tau_amp <= 0:
        raise ConfigError("settling time constants must be positive")
    if params.z_cap <= 0:
        raise ConfigError("z_cap must be positive")
    return params


# ---------------------------------------------------------------------------
# Digital control words
# ---------------------------------------------------------------------------

def fine_code_to_widths(code: int, steps: int = 30) -> tuple[int, int, int, int, int]:
    """Spread a single fine code round-robin over the five PWM widths."""
    if not 0 <= code <= 5 * steps:
        raise ConfigError(f"fine code {code} outside 0..{5 * steps}")
    base, extra = divmod(code, 5)
    return tuple(base + (1 if k < extra else 0) for k in range(5))  # type: ignore[return-value]


@dataclass(frozen=True)
class TrimCodes:
    ipfc_code: int = 0  # 0..63
    epf_code: int = 0  # 0..63
    coarse_code: int = 0  # -128..+128 (sign + magnitude)
    fine_widths: tuple[int, ...] = (0, 0, 0, 0, 0)  # each 0..30
    fine_sign: int = 1  # polarity of the fine DSL drive

    def __post_init__(self):
        object.__setattr__(self, "fine_widths", tuple(int(w) for w in self.fine_widths))
        if not 0 <= self.ipfc_code <= 63:
            raise ConfigError(f"ipfc_code {self.ipfc_code} outside 0..63")
        if not 0 <= self.epf_code <= 63:
            raise ConfigError(f"epf_code {self.epf_code} outside 0..63")
        if not -128 <= self.coarse_code <= 128:
            raise ConfigError(f"coarse_code {self.coarse_code} outside -128..128")
        if len(self.fine_widths) != 5:
            raise ConfigError("fine_widths needs exactly 5 entries")
        if any(not 0 <= w <= 30 for w in self.fine_widths):
            raise ConfigError("fine widths must lie in 0..30")
        if self.fine_sign not in (1, -1):
            raise ConfigError("fine_sign must be +1 or -1")

    @property
    def fine_code(self) -> int:
        return sum(self.fine_widths)

    def with_fine(self, code: int, sign: int = 1) -> "TrimCodes":
        return replace(self, fine_widths=fine_code_to_widths(code), fine_sign=sign)


# ---------------------------------------------------------------------------
# Noise and sources
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    white_floor: float = 21.9e-9  # input-referred V/sqrt(Hz)
    flicker_corner: float = 10.0  # Hz
    seed: int = 0
    enabled: bool = True

    def __post_init__(self):
        if self.white_floor < 0:
            raise ConfigError("white_floor must be >= 0")
        if self.flicker_corner < 0:
            raise ConfigError("flicker_corner must be >= 0")


@dataclass(frozen=True)
class ChannelSource:
    """Differential electrode signal for one channel."""

    kind: str = "constant"  # sine | constant | file
    amplitude: float = 0.0
    frequency: float = 0.0
    edo: float = 0.0
    z_electrode: float = 0.0
    path: Optional[str] = None
    drift_step: float = 0.0  # random-walk step (V) per drift_interval; 0 disables
    drift_interval: float = 1.0
    drift_seed: int = 0
    _table: Optional[tuple] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("sine", "constant", "file"):
            raise ConfigError(f"unknown source kind {self.kind!r}")
        if abs(self.edo) > 0.5:
            raise ConfigError("edo magnitude above 0.5 V is not accepted")
        if self.z_electrode < 0:
            raise ConfigError("z_electrode must be >= 0")
        if self.kind == "file":
            if not self.path:
                raise ConfigError("file source needs a path")
            if self._table is None:
                data = np.loadtxt(self.path, delimiter=",", ndmin=2)
                if data.shape[1] != 2:
                    raise ConfigError(f"{self.path}: expected two columns (time, volts)")
                object.__setattr__(self, "_table", (data[:, 0].copy(), data[:, 1].copy()))

    def signal(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "sine":
            return self.amplitude * np.sin(2 * np.pi * self.frequency * t)
        if self.kind == "file":
            tt, vv = self._table
            return np.interp(t, tt, vv)
        return np.full_like(t, self.amplitude)

    @property
    def dominant_frequency(self) -> float:
        return self.frequency if self.kind == "sine" else 0.0


@dataclass(frozen=True)
class ElectrodeSource:
    channels: tuple[ChannelSource, ...]

    @classmethod
    def grounded(cls, n_channels: int = 4) -> "ElectrodeSource":
        return cls(tuple(ChannelSource() for _ in range(n_channels)))

    def replace_channel(self, ch: int, src: ChannelSource) -> "ElectrodeSource":
        chans = list(self.channels)
        chans[ch] = src
        return ElectrodeSource(tuple(chans))


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------

@dataclass
class ChannelTrace:
    channel: int
    time: np.ndarray
    v_in: np.ndarray
    v_out: np.ndarray

    def __post_init__(self):
        if len(self.time) > 1:
            dt = np.diff(self.time)
            if np.any(dt <= 0):
                raise ValueError("trace times must be strictly increasing")
            if not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
                raise ValueError("trace sample period must be uniform")

    @property
    def sample_rate(self) -> float:
        return 1.0 / (self.time[1] - self.time[0])

    def __len__(self) -> int:
        return len(self.time)


# ---------------------------------------------------------------------------
# key = value round trip
# ---------------------------------------------------------------------------

def params_to_text(params: AfeParams, section: str = "afe") -> str:
    lines = []
    for f in fields(params):
        v = getattr(params, f.name)
        if isinstance(v, bool):
            s = "true" if v else "false"
        else:
            s = repr(v)
        lines.append(f"{section}.{f.name} = {s}")
    return "\n".join(lines) + "\n"


def params_from_mapping(values: dict) -> AfeParams:
    known = {f.name: f for f in fields(AfeParams)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown key afe.{key}")
        kwargs[key] = coerce(raw, known[key].type, f"afe.{key}")
    return AfeParams(**kwargs)


SI_SUFFIX = {"f": 1e-15, "p": 1e-12, "n": 1e-9, "u": 1e-6, "µ": 1e-6,
             "m": 1e-3, "k": 1e3, "M": 1e6, "G": 1e9, "T": 1e12}


def parse_number(text: str) -> float:
    """Parse a float with an optional SI suffix: ``40p``, ``2k``, ``1.5u``."""
    s = text.strip()
    if not s:
        raise ConfigError("empty number")
    scale = 1.0
    if s[-1] in SI_SUFFIX and not s.lower().endswith(("inf", "nan")):
        scale = SI_SUFFIX[s[-1]]
        s = s[:-1]
    try:
        return float(s) * scale
    except ValueError:
        raise ConfigError(f"not a number: {text!r}") from None


def coerce(raw, typ, key: str):
    if not isinstance(raw, str):
        return raw
    typ = str(typ)
    if typ == "bool":
        low = raw.strip().lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if typ == "int":
        v = parse_number(raw)
        if v != int(v):
            raise ConfigError(f"{key}: expected an integer, got {raw!r}")
        return int(v)
    if typ == "float":
        return parse_number(raw)
    if "str" in typ:
        return raw.strip()
    raise ConfigError(f"{key}: unsupported field type {typ}")


def sequence_codes(codes, n_channels: int) -> tuple[TrimCodes, ...]:
    """Broadcast one TrimCodes to every channel, or check a per-channel sequence."""
    if isinstance(codes, TrimCodes):
        return (codes,) * n_channels
    codes = tuple(codes)
    if len(codes) != n_channels:
        raise ConfigError("need one TrimCodes per channel")
    return codes


# ---------------------------------------------------------------------------
# Mismatch
# ---------------------------------------------------------------------------

# unit-capacitor counts of each trimmable array
CDAC_UNITS = {"ipfc": 63, "epf": 63, "dslc": 128, "dslf": 5}
# one switch per binary bit of the IBL CDACs
CDAC_SWITCHES = {"ipfc": 6, "epf": 6}


@dataclass(frozen=True)
class MismatchInstance:
    """One Monte-Carlo draw of capacitor, switch and comparator errors.

    ``cap_errors[group]`` holds the relative error of every unit capacitor of
    the group; ``switch_charge_offsets[group]`` the capacitance-equivalent
    charge error added when a bit's switch is closed.
    """

    cap_errors: dict = field(default_factory=dict)
    switch_charge_offsets: dict = field(default_factory=dict)
    epc_offset: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for d in (self.cap_errors, self.switch_charge_offsets):
            for k, v in d.items():
                if not np.all(np.isfinite(v)):
                    raise ValueError(f"non-finite mismatch in {k}")
        if not math.isfinite(self.epc_offset):
            raise ValueError("non-finite epc_offset")

    @classmethod
    def zero(cls) -> "MismatchInstance":
        return cls()

    def units(self, group: str) -> np.ndarray:
        e = self.cap_errors.get(group)
        return np.zeros(CDAC_UNITS[group]) if e is None else np.asarray(e, dtype=float)

    def switches(self, group: str) -> np.ndarray:
        s = self.switch_charge_offsets.get(group)
        return np.zeros(CDAC_SWITCHES[group]) if s is None else np.asarray(s, dtype=float)

    def __eq__(self, other):
        if not isinstance(other, MismatchInstance):
            return NotImplemented
        if (self.epc_offset, self.seed) != (other.epc_offset, other.seed):
            return False
        for a, b in ((self.cap_errors, other.cap_errors),
                     (self.switch_charge_offsets, other.switch_charge_offsets)):
            if a.keys() != b.keys() or any(not np.array_equal(a[k], b[k]) for k in a):
                return False
        return True

    __hash__ = None  # type: ignore[assignment]


def binary_cdac(code: int, lsb: float, group: str, mm: MismatchInstance) -> float:
    """Capacitance of a 6-bit binary-weighted CDAC built from unit capacitors."""
    units = mm.units(group)
    sw = mm.switches(group)
    total = 0.0
    for bit in range(6):
        if code >> bit & 1:
            lo, hi = (1 << bit) - 1, (1 << (bit + 1)) - 1
            total += lsb * float(np.sum(1.0 + units[lo:hi])) + sw[bit]
    return total
