"""Line-oriented ``section.key = value`` configuration files.

Grammar::

    # comment (also allowed after a value)
    afe.c_in = 40p            # any AfeParams field
    noise.white_floor = 21.9n # white_floor, flicker_corner, seed, enabled
    source.all.edo = 300m     # applies to every channel ...
    source.ch2.kind = sine    # ... then per-channel keys override
    sim.duration = 2          # duration, output_rate, pwm_mode, auto_calibrate
    epc.k_epc = 0.9m          # k_epc, n_max
    mc.study = impedance      # study, n, frequency, sigma_cap, sigma_switch, sigma_epc
    crosstalk.aggressor = 0   # aggressor, victim, frequency
    sweep.residuals = worst   # worst | trimmed
    codes.ch0.coarse_code = 5 # manual trims: ipfc_code, epf_code, coarse_code, fine_code, fine_sign

Numbers take SI suffixes (f p n u m k M G T).  Unknown sections or keys and
repeated keys are errors.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .model import (AfeParams, ChannelSource, ConfigError, ElectrodeSource, NoiseSpec,
                    coerce, params_from_mapping, validate)

PRESETS = {
    "defaults": "# built-in defaults\n",
    "edo384": "# every channel at the full 384 mV DC tolerance\nsource.all.edo = 384m\n",
}

_SOURCE_KEYS = {f.name: f.type for f in fields(ChannelSource) if not f.name.startswith("_")}
_NOISE_KEYS = {f.name: f.type for f in fields(NoiseSpec)}
_SIM_KEYS = {"duration": "float", "output_rate": "float", "pwm_mode": "str",
             "auto_calibrate": "bool"}
_EPC_KEYS = {"k_epc": "float", "n_max": "int"}
_MC_KEYS = {"study": "str", "n": "int", "frequency": "float", "sigma_cap": "float",
            "sigma_switch": "float", "sigma_epc": "float"}
_XT_KEYS = {"aggressor": "int", "victim": "int", "frequency": "float"}
_SWEEP_KEYS = {"residuals": "str", "points": "int"}
_CODE_KEYS = {"ipfc_code": "int", "epf_code": "int", "coarse_code": "int",
              "fine_code": "int", "fine_sign": "int"}


@dataclass
class Config:
    params: AfeParams = field(default_factory=AfeParams)
    source: ElectrodeSource = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    sim: dict = field(default_factory=lambda: {"duration": 2.0, "output_rate": None,
                                               "pwm_mode": "averaged", "auto_calibrate": True})
    epc: dict = field(default_factory=lambda: {"k_epc": 0.9e-3, "n_max": 10000})
    mc: dict = field(default_factory=lambda: {"study": "impedance", "n": 100, "frequency": 50.0,
                                              "sigma_cap": 0.01, "sigma_switch": 0.25e-15,
                                              "sigma_epc": 20e-6})
    crosstalk: dict = field(default_factory=lambda: {"aggressor": 0, "victim": 1,
                                                     "frequency": 10.0})
    sweep: dict = field(default_factory=lambda: {"residuals": "worst", "points": 40})
    codes: dict = field(default_factory=dict)  # channel -> {key: int}
    digest: str = ""
    origin: str = ""


def _typed(table: dict, key: str, raw: str, where: str):
    if key not in table:
        raise ConfigError(f"unknown key {where}")
    return coerce(raw, table[key], where)


def parse_text(text: str, origin: str = "<text>", base_dir: Optional[Path] = None) -> Config:
    seen = set()
    afe, noise, all_src = {}, {}, {}
    per_src: dict[int, dict] = {}
    cfg = Config()
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key in seen:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key}")
        seen.add(key)
        parts = key.split(".")
        where = f"{origin}:{lineno}: {key}"
        section = parts[0]
        if section == "afe" and len(parts) == 2:
            afe[parts[1]] = raw
        elif section == "noise" and len(parts) == 2:
            noise[parts[1]] = _typed(_NOISE_KEYS, parts[1], raw, where)
        elif section == "source" and len(parts) == 3:
            value = _typed(_SOURCE_KEYS, parts[2], raw, where)
            if parts[2] == "path" and base_dir is not None and not Path(value).is_absolute():
                value = str(base_dir / value)
            if parts[1] == "all":
                all_src[parts[2]] = value
            elif parts[1].startswith("ch") and parts[1][2:].isdigit():
                per_src.setdefault(int(parts[1][2:]), {})[parts[2]] = value
            else:
                raise ConfigError(f"unknown key {where}")
        elif section == "codes" and len(parts) == 3 and parts[1].startswith("ch") \
                and parts[1][2:].isdigit():
            cfg.codes.setdefault(int(parts[1][2:]), {})[parts[2]] = \
                _typed(_CODE_KEYS, parts[2], raw, where)
        elif len(parts) == 2 and section in ("sim", "epc", "mc", "crosstalk", "sweep"):
            table = {"sim": _SIM_KEYS, "epc": _EPC_KEYS, "mc": _MC_KEYS,
                     "crosstalk": _XT_KEYS, "sweep": _SWEEP_KEYS}[section]
            getattr(cfg, section)[parts[1]] = _typed(table, parts[1], raw, where)
        else:
            raise ConfigError(f"unknown key {where}")

    cfg.params = validate(params_from_mapping(afe))
    n = cfg.params.n_channels
    if any(ch >= n for ch in per_src) or any(ch >= n for ch in cfg.codes):
        raise ConfigError("channel index beyond n_channels")
    chans = []
    for ch in range(n):
        kw = dict(all_src)
        kw.update(per_src.get(ch, {}))
        chans.append(ChannelSource(**kw))
    cfg.source = ElectrodeSource(tuple(chans))
    cfg.noise = NoiseSpec(**noise)
    if cfg.sim["pwm_mode"] not in ("averaged", "exact_edges"):
        raise ConfigError(f"unknown sim.pwm_mode {cfg.sim['pwm_mode']!r}")
    if cfg.sweep["residuals"] not in ("worst", "trimmed"):
        raise ConfigError("sweep.residuals must be 'worst' or 'trimmed'")
    cfg.origin = origin
    return cfg


def load(name: str) -> tuple[Config, bytes]:
    """Load a config file path, or a built-in preset name."""
    path = Path(name)
    if path.is_file():
        data = path.read_bytes()
        base = path.parent
    elif name in PRESETS:
        data = PRESETS[name].encode()
        base = None
    else:
        raise ConfigError(f"no such config file or preset: {name}")
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise ConfigError(f"{name}: not UTF-8 text") from None
    cfg = parse_text(text, origin=name, base_dir=base)
    cfg.digest = hashlib.sha256(data).hexdigest()
    return cfg, data
