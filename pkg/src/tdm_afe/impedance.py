"""Closed-form input impedance of the two-stage impedance boost loop (IBL).

Currents into the LNA input node come from the chopped input capacitor
(``i_ccia``), the over-sized positive-feedback capacitor (``i_pf``) and the
6-bit sink CDAC (``i_com``).  All switched branches move charge at 2*f_ch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import AfeParams, ConfigError, MismatchInstance, TrimCodes, binary_cdac


@dataclass(frozen=True)
class NodeCurrents:
    i_ccia: float
    i_pf: float
    i_com: float
    i_ext: float
    i_lna: float


@dataclass(frozen=True)
class ImpedanceReport:
    z_lna: float
    z_ext_branch: float
    z_tot: float
    at_frequency: float
    residual_int: float  # net internal capacitance left after trimming (F)
    residual_ext: float  # net external capacitance left after trimming (F)


def optimal_ipf(c_in: float, a0: float) -> float:
    if a0 <= 1:
        raise ConfigError("no positive-feedback solution for a0 <= 1")
    return c_in / (a0 - 1)


def c_ipfc(code: int, params: AfeParams, mm: Optional[MismatchInstance] = None) -> float:
    return binary_cdac(code, params.c_ipfc_lsb, "ipfc", mm or MismatchInstance.zero())


def c_epf(code: int, params: AfeParams, mm: Optional[MismatchInstance] = None) -> float:
    return binary_cdac(code, params.c_epf_lsb, "epf", mm or MismatchInstance.zero())


def internal_residual(c_sink: float, params: AfeParams) -> float:
    """Signed net capacitance seen by the chopper input after the internal IBL."""
    if not params.int_ibl:
        return params.c_in
    return params.c_in - (params.a0 - 1) * params.c_ipf + c_sink


def external_residual(c_comp: float, params: AfeParams) -> float:
    """Signed C_EXT left over after the external IBL's negative capacitor."""
    if not params.ext_ibl:
        return params.c_ext
    return params.c_ext - (params.a0 - 1) * c_comp


def node_currents(v_i: float, c_sink: float, params: AfeParams) -> NodeCurrents:
    rate = 2 * params.f_ch
    i_ccia = v_i * rate * params.c_in
    if params.int_ibl:
        i_pf = v_i * rate * (params.a0 - 1) * params.c_ipf
        i_com = v_i * rate * c_sink
    else:
        i_pf = i_com = 0.0
    return NodeCurrents(i_ccia, i_pf, i_com, 0.0, i_ccia + i_com - i_pf)


def lna_current(v_i: float, codes: TrimCodes, params: AfeParams,
                mm: Optional[MismatchInstance] = None) -> NodeCurrents:
    return node_currents(v_i, c_ipfc(codes.ipfc_code, params, mm), params)


def z_lna_bound(stage: str, params: AfeParams) -> float:
    """Worst-case (half-LSB residual) lower bound on the LNA input impedance."""
    rate = 2 * params.f_ch
    if stage == "basic":
        return 1.0 / (rate * (params.a0 - 1) * 0.5 * params.c_ipf_lsb)
    if stage == "two_stage":
        return 1.0 / (rate * 0.5 * params.c_ipfc_lsb)
    raise ValueError(f"unknown stage {stage!r}")


def _inv(g: float, cap: float) -> float:
    return cap if g <= 1.0 / cap else 1.0 / g


def parallel(z_a: float, z_b: float, cap: float = math.inf) -> float:
    return _inv(1.0 / z_a + 1.0 / z_b, cap)


def z_tot(f: float, codes: Optional[TrimCodes], params: AfeParams,
          mm: Optional[MismatchInstance] = None) -> ImpedanceReport:
    """Total input impedance magnitude at ``f``.

    With ``codes=None`` both residuals take their worst case of half an LSB
    (the external one amplified by a0-1); otherwise the actual post-trim
    capacitances, including mismatch, are used.
    """
    if f <= 0:
        raise ValueError("frequency must be positive")
    if codes is None:
        r_int = 0.5 * params.c_ipfc_lsb if params.int_ibl else params.c_in
        r_ext = (params.a0 - 1) * 0.5 * params.c_epf_lsb if params.ext_ibl else params.c_ext
    else:
        r_int = internal_residual(c_ipfc(codes.ipfc_code, params, mm), params)
        r_ext = external_residual(c_epf(codes.epf_code, params, mm), params)
    g_lna = 2 * params.f_ch * abs(r_int)
    g_ext = 2 * math.pi * f * abs(r_ext)
    cap = params.z_cap
    return ImpedanceReport(
        z_lna=_inv(g_lna, cap),
        z_ext_branch=_inv(g_ext, cap),
        z_tot=_inv(g_lna + g_ext, cap),
        at_frequency=f,
        residual_int=r_int,
        residual_ext=r_ext,
    )


def _argmin_low(values: np.ndarray, tol: float) -> int:
    # lowest index among values within tol of the minimum
    best = values.min()
    return int(np.flatnonzero(values <= best + tol)[0])


def trim_ibl(params: AfeParams, mm: Optional[MismatchInstance] = None,
             v_probe: float = 1e-3) -> TrimCodes:
    """Exhaustively pick the IBL CDAC codes that minimise the residual currents."""
    mm = mm or MismatchInstance.zero()
    ipfc = 0
    if params.int_ibl:
        if (params.a0 - 1) * params.c_ipf <= params.c_in:
            raise ConfigError("internal IBL cannot sink under-compensated current")
        i_res = np.array([abs(lna_current(v_probe, TrimCodes(ipfc_code=c), params, mm).i_lna)
                          for c in range(64)])
        ipfc = _argmin_low(i_res, 1e-9 * v_probe * 2 * params.f_ch * params.c_ipfc_lsb)
    epf = 0
    if params.ext_ibl:
        # residual external-branch current at the probe amplitude, per unit angular frequency
        e_res = np.array([abs(v_probe * external_residual(c_epf(c, params, mm), params))
                          for c in range(64)])
        epf = _argmin_low(e_res, 1e-9 * v_probe * params.c_epf_lsb)
    return TrimCodes(ipfc_code=ipfc, epf_code=epf)


def sweep_frequencies(n: int = 40, f_lo: float = 0.5, f_hi: float = 100.0,
                      anchors=(1.0, 50.0)) -> np.ndarray:
    grid = np.concatenate((np.logspace(np.log10(f_lo), np.log10(f_hi), n), anchors))
    return np.unique(grid)


def impedance_sweep(freqs, codes: Optional[TrimCodes], params: AfeParams,
                    mm: Optional[MismatchInstance] = None) -> list[ImpedanceReport]:
    return [z_tot(float(f), codes, params, mm) for f in freqs]
