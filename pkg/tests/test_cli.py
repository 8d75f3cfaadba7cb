import json

import pytest

from tdm_afe.cli import dispatch


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_validate_defaults(tmp_path):
    assert dispatch(["validate-config", "--config", "defaults", "--out", str(tmp_path)]) == 0
    m = _manifest(tmp_path)
    assert m["exit_code"] == 0 and len(m["config_sha256"]) == 64


def test_impedance_sweep_csv(tmp_path):
    assert dispatch(["impedance-sweep", "--out", str(tmp_path), "--assert"]) == 0
    lines = (tmp_path / "impedance.csv").read_text().splitlines()
    assert lines[0] == "frequency_hz,z_lna_ohm,z_ext_ohm,z_tot_ohm"
    f = [float(l.split(",")[0]) for l in lines[1:]]
    assert f == sorted(f) and f[0] == 0.5 and f[-1] == 100.0
    assert 1.0 in f and 50.0 in f
    assert "e" in lines[1].split(",")[1]
    assert _manifest(tmp_path)["outputs"] == ["impedance.csv"]


def test_calibrate_edo384_assert(tmp_path):
    assert dispatch(["calibrate", "--config", "edo384", "--assert", "--out", str(tmp_path)]) == 0
    cal = json.loads((tmp_path / "calibration.json").read_text())
    assert all(abs(c["residual_volts"]) <= 135e-6 for c in cal["channels"])
    assert len(cal["channels"]) == 4


def test_rerun_is_byte_identical(tmp_path):
    argv = ["montecarlo", "--seed", "3", "--config"]
    cfg = tmp_path / "mc.cfg"
    cfg.write_text("mc.n = 6\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert dispatch(argv + [str(cfg), "--out", str(a)]) == 0
    assert dispatch(argv + [str(cfg), "--out", str(b)]) == 0
    for name in ("montecarlo.csv", "montecarlo_summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_transient_outputs(tmp_path):
    assert dispatch(["transient", "--duration", "0.01", "--out", str(tmp_path)]) == 0
    for ch in range(4):
        assert (tmp_path / f"trace_ch{ch}.csv").exists()


def test_crosstalk_assert(tmp_path):
    assert dispatch(["crosstalk", "--duration", "1", "--assert", "--out", str(tmp_path)]) == 0
    xt = json.loads((tmp_path / "crosstalk.json").read_text())
    assert xt["with_reset_db"] < xt["without_reset_db"]


def test_unknown_subcommand(capsys):
    assert dispatch(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag(tmp_path, capsys):
    assert dispatch(["calibrate", "--bogus", "--out", str(tmp_path)]) == 1


def test_config_error_still_writes_manifest(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("afe.c_in = 0\n")
    out = tmp_path / "o"
    assert dispatch(["calibrate", "--config", str(cfg), "--out", str(out)]) == 1
    assert _manifest(out)["exit_code"] == 1


@pytest.mark.parametrize("text", ["afe.nonsense = 1\n", "afe.f_m = 10k\n", "garbage\n",
                                  "afe.c_in = 40p\nafe.c_in = 40p\n", "sim.pwm_mode = x\n"])
def test_config_errors(tmp_path, text):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(text)
    assert dispatch(["validate-config", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_missing_config(tmp_path):
    assert dispatch(["validate-config", "--config", str(tmp_path / "nope"),
                     "--out", str(tmp_path)]) == 1


def test_runtime_error(tmp_path):
    assert dispatch(["noise", "--duration", "0.01", "--out", str(tmp_path)]) == 2
    assert _manifest(tmp_path)["exit_code"] == 2


def test_assert_violation(tmp_path):
    cfg = tmp_path / "mc.cfg"
    cfg.write_text("mc.n = 5\nmc.sigma_cap = 0.5\n")
    argv = ["montecarlo", "--config", str(cfg), "--out", str(tmp_path)]
    assert dispatch(argv + ["--assert"]) == 3
    assert _manifest(tmp_path)["violations"]
    # without --assert the violation is only reported
    assert dispatch(argv) == 0


def test_codes_roundtrip(tmp_path):
    cfg = tmp_path / "e.cfg"
    cfg.write_text("source.all.edo = 200m\n")
    cal = tmp_path / "cal"
    assert dispatch(["calibrate", "--config", str(cfg), "--out", str(cal)]) == 0
    out = tmp_path / "t"
    assert dispatch(["transient", "--config", str(cfg), "--duration", "0.05",
                     "--codes", str(cal / "calibration.json"), "--out", str(out)]) == 0
    last = (out / "trace_ch0.csv").read_text().splitlines()[-1]
    assert abs(float(last.split(",")[2])) < 100 * 135e-6
