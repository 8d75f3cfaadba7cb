"""Mismatch sampling and batch statistics."""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .impedance import trim_ibl, z_tot
from .model import CDAC_SWITCHES, CDAC_UNITS, AfeParams, MismatchInstance
from .servo import RESIDUAL_BOUND, EpcModel, calibrate_channel, chip_nth, epc_compare

__all__ = ["MismatchInstance", "Sigmas", "BatchStats", "SampleRow", "sample_mismatch",
           "run_batch", "batch_stats", "edo_grid"]

# fitted so 100-sample impedance minima sit near 6.4 GOhm @50 Hz and 74.5 GOhm @1 Hz
DEFAULT_SIGMA_CAP = 0.01
DEFAULT_SIGMA_SWITCH = 0.25e-15
DEFAULT_SIGMA_EPC = 20e-6


@dataclass(frozen=True)
class Sigmas:
    cap: float = DEFAULT_SIGMA_CAP
    switch: float = DEFAULT_SIGMA_SWITCH
    epc: float = DEFAULT_SIGMA_EPC

    def __post_init__(self):
        if min(self.cap, self.switch, self.epc) < 0:
            raise ValueError("sigmas must be >= 0")


def _element_key(element: str) -> int:
    return int.from_bytes(hashlib.blake2b(element.encode(), digest_size=8).digest(), "little")


def _normals(seed: int, element: str, n: int) -> np.ndarray:
    # counter-based stream keyed by (seed, element id): independent of draw order
    bits = np.random.Philox(key=[seed & (2**64 - 1), _element_key(element)])
    return np.random.Generator(bits).standard_normal(n)


def sample_mismatch(seed: int, sigma_cap: float = DEFAULT_SIGMA_CAP,
                    sigma_switch: float = DEFAULT_SIGMA_SWITCH,
                    sigma_epc: float = DEFAULT_SIGMA_EPC) -> MismatchInstance:
    if min(sigma_cap, sigma_switch, sigma_epc) < 0:
        raise ValueError("sigmas must be >= 0")
    caps = {g: sigma_cap * _normals(seed, f"cap.{g}", n) for g, n in CDAC_UNITS.items()}
    sws = {g: sigma_switch * _normals(seed, f"switch.{g}", n) for g, n in CDAC_SWITCHES.items()}
    epc = sigma_epc * float(_normals(seed, "epc.offset", 1)[0])
    return MismatchInstance(caps, sws, epc, seed)


@dataclass
class BatchStats:
    n: int
    min: float
    max: float
    mean: float
    std: float
    p5: float
    p50: float
    p95: float
    n_failed: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SampleRow:
    sample_id: int
    seed: int
    metric: float
    flags: list = field(default_factory=list)
    ok: bool = True


def batch_stats(values) -> BatchStats:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        nan = float("nan")
        return BatchStats(0, nan, nan, nan, nan, nan, nan, nan)
    p5, p50, p95 = np.percentile(v, [5, 50, 95])
    # sorted input makes the float sums independent of evaluation order
    return BatchStats(int(v.size), float(v[0]), float(v[-1]), float(np.mean(v)),
                      float(np.std(v)), float(p5), float(p50), float(p95))


def edo_grid(n: int = 97, full_scale: float = 0.384) -> np.ndarray:
    return np.linspace(-full_scale, full_scale, n)


# ---------------------------------------------------------------------------
# Per-sample metrics
# ---------------------------------------------------------------------------

def _impedance(params, mm, model, f):
    codes = trim_ibl(params, mm)
    return z_tot(f, codes, params, mm).z_tot, []


def _delta_n(params, mm, model, _):
    _, n_lo = epc_compare(90e-6, model)
    _, n_hi = epc_compare(135e-6, model)
    return float(n_lo - n_hi), []


def _cal_residual(params, mm, model, edos):
    n_th = chip_nth(params, mm, model)
    worst = 0.0
    flags = set()
    for e in edos:
        _, rep = calibrate_channel(0, float(e), params, mm, model, n_th)
        worst = max(worst, abs(rep.residual_volts))
        flags.update(rep.flags)
    if worst > RESIDUAL_BOUND:
        flags.add("residual above bound")
    return worst, sorted(flags)


STUDIES = {"impedance": _impedance, "delta_n": _delta_n, "calibration_residual": _cal_residual}


def _one(study: str, arg, params: AfeParams, sigmas: Sigmas, k_epc: float,
         sample_id: int, seed: int) -> SampleRow:
    try:
        mm = sample_mismatch(seed, sigmas.cap, sigmas.switch, sigmas.epc)
        model = EpcModel(k_epc=k_epc, offset=mm.epc_offset)
        metric, flags = STUDIES[study](params, mm, model, arg)
        return SampleRow(sample_id, seed, float(metric), list(flags))
    except Exception as exc:  # recorded per row, never fatal
        return SampleRow(sample_id, seed, float("nan"), [f"error: {exc}"], ok=False)


def _threads() -> int:
    raw = os.environ.get("AFE_SIM_THREADS", "1")
    n = int(raw) if raw.strip() else 1
    return os.cpu_count() or 1 if n == 0 else max(1, n)


def run_batch(study: str, n: int, params: Optional[AfeParams] = None,
              sigmas: Optional[Sigmas] = None, base_seed: int = 0,
              frequency: float = 50.0, edos=None, k_epc: float = 0.9e-3,
              order=None, workers: Optional[int] = None) -> tuple[BatchStats, list[SampleRow]]:
    """Run ``n`` mismatch samples of ``study`` and aggregate.

    ``study`` is one of ``impedance`` (z_tot at ``frequency`` after trimming),
    ``delta_n`` (EPC count at 90 uV minus at 135 uV) and
    ``calibration_residual`` (worst post-DSL residual over ``edos``).
    Rows come back ordered by sample id whatever ``order`` they ran in.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if study not in STUDIES:
        raise ValueError(f"unknown study {study!r}")
    params = params or AfeParams()
    sigmas = sigmas or Sigmas()
    if study == "impedance":
        arg = frequency
    elif study == "calibration_residual":
        arg = tuple(edo_grid() if edos is None else edos)
    else:
        arg = None
    ids = list(range(n)) if order is None else list(order)
    if sorted(ids) != list(range(n)):
        raise ValueError("order must be a permutation of range(n)")
    jobs = [(study, arg, params, sigmas, k_epc, i, base_seed + i) for i in ids]
    workers = workers or _threads()
    if workers > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_one, *zip(*jobs)))
    else:
        rows = [_one(*job) for job in jobs]
    rows.sort(key=lambda r: r.sample_id)
    stats = batch_stats([r.metric for r in rows if r.ok and math.isfinite(r.metric)])
    stats.n_failed = sum(not r.ok for r in rows)
    return stats, rows
