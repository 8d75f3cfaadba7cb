"""Batch command-line front end.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error,
3 an ``--assert`` bound was violated.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config, load
from .engine import SimConfig, run_transient
from .impedance import impedance_sweep, sweep_frequencies, trim_ibl
from .measure import measure_crosstalk, measure_irn
from .model import ConfigError, TrimCodes, fine_code_to_widths
from .montecarlo import Sigmas, run_batch, sample_mismatch
from .servo import RESIDUAL_BOUND, EpcModel, calibrate_channel, chip_nth

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ASSERT = 0, 1, 2, 3

IRN_TARGET = 0.27e-6
IRN_TOL = 0.15
Z_MIN = {1.0: 74.5e9, 50.0: 6.4e9}
CROSSTALK_BOUND_DB = -40.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def fmt(x: float) -> str:
    return f"{x:.8e}"


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(c if isinstance(c, str) else
                              str(c) if isinstance(c, (int, np.integer)) else fmt(c)
                              for c in row) + "\n")


def write_json(path: Path, obj) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


class Run:
    """Collects outputs and assertion failures for the manifest."""

    def __init__(self, command: str, out: Path):
        self.command = command
        self.out = out
        self.outputs: list[str] = []
        self.violations: list[str] = []

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs.append(name)
        return self.out / name

    def check(self, ok: bool, what: str) -> None:
        if not ok:
            self.violations.append(what)


# ---------------------------------------------------------------------------
# Shared setup
# ---------------------------------------------------------------------------

def _seed(cfg: Config, args) -> int:
    return cfg.noise.seed if args.seed is None else args.seed


def _epc(cfg: Config, mm=None) -> EpcModel:
    return EpcModel(k_epc=cfg.epc["k_epc"], n_max=cfg.epc["n_max"],
                    offset=mm.epc_offset if mm is not None else 0.0)


def _mismatch(cfg: Config, args):
    if not getattr(args, "mismatch", False):
        return None
    mc = cfg.mc
    return sample_mismatch(_seed(cfg, args), mc["sigma_cap"], mc["sigma_switch"], mc["sigma_epc"])


def calibrate_all(cfg: Config, mm=None):
    """IBL trim plus per-channel DSL calibration on each channel's EDO."""
    p = cfg.params
    ibl = trim_ibl(p, mm)
    model = _epc(cfg, mm)
    n_th = chip_nth(p, mm, model)
    codes, reports = [], []
    for ch, src in enumerate(cfg.source.channels):
        state, rep = calibrate_channel(ch, src.edo, p, mm, model, n_th)
        codes.append(state.codes(ibl))
        reports.append(rep)
    return ibl, n_th, codes, reports


def _manual_codes(cfg: Config, codes: list) -> list:
    for ch, kv in cfg.codes.items():
        kv = dict(kv)
        c = codes[ch]
        if "fine_code" in kv or "fine_sign" in kv:
            c = replace(c, fine_widths=fine_code_to_widths(kv.pop("fine_code", c.fine_code)),
                        fine_sign=kv.pop("fine_sign", c.fine_sign))
        codes[ch] = replace(c, **kv)
    return codes


def _load_codes(path: str, n: int) -> list:
    data = json.loads(Path(path).read_text())
    chans = sorted(data["channels"], key=lambda c: c["channel"])
    if len(chans) != n:
        raise ConfigError(f"{path}: expected {n} channels of codes")
    ibl = data.get("ibl", {})
    return [TrimCodes(ipfc_code=ibl.get("ipfc_code", 0), epf_code=ibl.get("epf_code", 0),
                      coarse_code=c["coarse_code"], fine_widths=tuple(c["fine_widths"]),
                      fine_sign=c["fine_sign"]) for c in chans]


def sim_config(cfg: Config, args) -> SimConfig:
    mm = _mismatch(cfg, args)
    n = cfg.params.n_channels
    if getattr(args, "codes", None):
        codes = _load_codes(args.codes, n)
    elif cfg.sim["auto_calibrate"]:
        codes = calibrate_all(cfg, mm)[2]
    else:
        codes = [TrimCodes()] * n
    codes = _manual_codes(cfg, list(codes))
    kw = {}
    if mm is not None:
        kw["mm"] = mm
    duration = args.duration if getattr(args, "duration", None) else cfg.sim["duration"]
    return SimConfig(params=cfg.params, source=cfg.source,
                     noise=replace(cfg.noise, seed=_seed(cfg, args)), codes=tuple(codes),
                     duration=duration, output_rate=cfg.sim["output_rate"],
                     pwm_mode=cfg.sim["pwm_mode"], **kw).validated()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_validate(cfg: Config, args, run: Run) -> None:
    SimConfig(params=cfg.params, source=cfg.source, noise=cfg.noise,
              duration=cfg.sim["duration"], output_rate=cfg.sim["output_rate"],
              pwm_mode=cfg.sim["pwm_mode"]).validated()


def cmd_impedance_sweep(cfg: Config, args, run: Run) -> None:
    p = cfg.params
    mm = _mismatch(cfg, args)
    codes = None if cfg.sweep["residuals"] == "worst" else trim_ibl(p, mm)
    freqs = sweep_frequencies(cfg.sweep["points"])
    reports = impedance_sweep(freqs, codes, p, mm)
    write_csv(run.path("impedance.csv"), ["frequency_hz", "z_lna_ohm", "z_ext_ohm", "z_tot_ohm"],
              [(r.at_frequency, r.z_lna, r.z_ext_branch, r.z_tot) for r in reports])
    by_f = {r.at_frequency: r for r in reports}
    for f, bound in Z_MIN.items():
        run.check(by_f[f].z_tot >= bound, f"z_tot({f:g} Hz) = {by_f[f].z_tot:.4g} < {bound:.4g}")


def cmd_calibrate(cfg: Config, args, run: Run) -> None:
    mm = _mismatch(cfg, args)
    ibl, n_th, _, reports = calibrate_all(cfg, mm)
    write_json(run.path("calibration.json"), {
        "ibl": {"ipfc_code": ibl.ipfc_code, "epf_code": ibl.epf_code},
        "n_th": n_th,
        "channels": [r.to_dict() for r in reports],
    })
    for r in reports:
        run.check(abs(r.residual_volts) <= RESIDUAL_BOUND,
                  f"channel {r.channel} residual {r.residual_volts:.4g} V > {RESIDUAL_BOUND:g}")


def cmd_transient(cfg: Config, args, run: Run) -> None:
    sim = sim_config(cfg, args)
    for tr in run_transient(sim):
        write_csv(run.path(f"trace_ch{tr.channel}.csv"), ["time_s", "v_in_v", "v_out_v"],
                  zip(tr.time, tr.v_in, tr.v_out))


def cmd_noise(cfg: Config, args, run: Run) -> None:
    sim = sim_config(cfg, args)
    res = measure_irn(sim, channel=args.channel)
    if res.psd is not None:
        write_csv(run.path("psd.csv"), ["freq_hz", "v2_per_hz"],
                  zip(res.psd.frequencies, res.psd.density))
    write_json(run.path("noise_summary.json"),
               {"irn_vrms": res.irn_vrms, "band_hz": list(res.band_hz), "gain_db": res.gain_db,
                "channel": args.channel})
    run.check(abs(res.irn_vrms - IRN_TARGET) <= IRN_TOL * IRN_TARGET,
              f"IRN {res.irn_vrms:.4g} V outside {IRN_TARGET:g} +/- {IRN_TOL:.0%}")


def cmd_crosstalk(cfg: Config, args, run: Run) -> None:
    sim = sim_config(cfg, args)
    xt = cfg.crosstalk
    with_reset = measure_crosstalk(sim, xt["aggressor"], xt["victim"], xt["frequency"])
    no_reset = replace(sim, params=replace(sim.params, reset_enabled=False))
    without = measure_crosstalk(no_reset, xt["aggressor"], xt["victim"], xt["frequency"])
    write_json(run.path("crosstalk.json"), {
        "aggressor": xt["aggressor"], "victim": xt["victim"], "frequency_hz": xt["frequency"],
        "with_reset_db": with_reset, "without_reset_db": without})
    run.check(with_reset < without, "reset does not reduce crosstalk")
    run.check(with_reset <= CROSSTALK_BOUND_DB, f"crosstalk {with_reset:.1f} dB > -40 dB")


def cmd_montecarlo(cfg: Config, args, run: Run) -> None:
    mc = cfg.mc
    study = mc["study"]
    sig = Sigmas(mc["sigma_cap"], mc["sigma_switch"], mc["sigma_epc"])
    seed = _seed(cfg, args)
    stats, rows = run_batch(study, mc["n"], cfg.params, sig, base_seed=seed,
                            frequency=mc["frequency"], k_epc=cfg.epc["k_epc"])
    write_csv(run.path("montecarlo.csv"), ["sample_id", "seed", "metric", "flags"],
              [(r.sample_id, r.seed, r.metric, ";".join(r.flags)) for r in rows])
    summary = stats.to_dict()
    summary.update(study=study, base_seed=seed, sigmas=sig.__dict__)
    if study == "impedance":
        summary["frequency_hz"] = mc["frequency"]
    write_json(run.path("montecarlo_summary.json"), summary)
    run.check(stats.n_failed == 0, f"{stats.n_failed} samples failed")
    if study == "impedance" and mc["frequency"] in Z_MIN:
        bound = Z_MIN[mc["frequency"]]
        run.check(stats.min >= bound, f"batch min {stats.min:.4g} < {bound:.4g}")
    elif study == "delta_n":
        run.check(stats.min >= 1, f"min delta N {stats.min:g} < 1")
    elif study == "calibration_residual":
        run.check(stats.max <= RESIDUAL_BOUND, f"max residual {stats.max:.4g} > 135 uV")


COMMANDS = {
    "validate-config": cmd_validate,
    "impedance-sweep": cmd_impedance_sweep,
    "calibrate": cmd_calibrate,
    "transient": cmd_transient,
    "noise": cmd_noise,
    "crosstalk": cmd_crosstalk,
    "montecarlo": cmd_montecarlo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tdm-afe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default="defaults",
                        help="config file path or preset name (defaults, edo384)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--assert", dest="check", action="store_true",
                        help="exit 3 if the command's acceptance bound is violated")
        if name in ("impedance-sweep", "calibrate", "transient", "noise", "crosstalk"):
            sp.add_argument("--mismatch", action="store_true",
                            help="apply one mismatch draw keyed by --seed")
        if name in ("transient", "noise", "crosstalk"):
            sp.add_argument("--codes", help="reuse trims from a calibration.json")
            sp.add_argument("--duration", type=float, help="override sim.duration (s)")
        if name == "noise":
            sp.add_argument("--channel", type=int, default=0)
    return parser


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    out = Path(args.out)
    run = Run(args.command, out)
    manifest = {"command": args.command, "config": args.config, "config_sha256": None,
                "seed": args.seed, "tool_version": __version__, "start": _now(),
                "argv": list(argv if argv is not None else sys.argv[1:])}
    code = EXIT_OK
    try:
        cfg, _ = load(args.config)
        manifest["config_sha256"] = cfg.digest
        manifest["seed"] = _seed(cfg, args)
        COMMANDS[args.command](cfg, args, run)
        if run.violations:
            for v in run.violations:
                print(f"bound violated: {v}", file=sys.stderr)
            if args.check:
                code = EXIT_ASSERT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_RUNTIME
    manifest.update(end=_now(), outputs=list(run.outputs), exit_code=code,
                    violations=list(run.violations))
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "manifest.json", manifest)
    return code


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
