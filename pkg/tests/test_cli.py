import json
import subprocess
import sys

import pytest

from mfarb.cli import main

FAST = ["--model", "geometric", "--dt", "0.0625", "--paths", "64", "--seed", "3"]


def _run(args, out):
    return main(args + ["--out", str(out)])


def test_simulate(tmp_path):
    assert _run(["simulate", *FAST, "--rule", "tilt", "--sigma-c", "0.3", "--dump-particles"], tmp_path) == 0
    for name in ("manifest.json", "trajectory.csv", "summary.json", "run.log", "particles.npz"):
        assert (tmp_path / name).exists()
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["mean_V_T"] > 0
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
    assert header.startswith("t,X_1,X_2,Z_1,Z_2,mean_V") and header.endswith(",L")


def test_solve(tmp_path):
    assert _run(["solve", *FAST], tmp_path) == 0
    d = json.loads((tmp_path / "equilibrium.json").read_text())
    assert d["converged"] and d["value"]["U"][-1] == 1.0
    assert (tmp_path / "value.csv").read_text().startswith("t,tau,U,stderr")


def test_chaos(tmp_path):
    assert _run(["chaos", *FAST, "--N", "2,8", "--M-ref", "16", "--replications", "2", "--rule", "tilt",
                 "--sigma-c", "0.5"], tmp_path) == 0
    d = json.loads((tmp_path / "chaos.json").read_text())
    assert d["N"] == [2, 8] and len(d["distance"]) == 2


def test_verify_pde(tmp_path):
    assert _run(["verify-pde", "--nodes", "9"], tmp_path) == 0
    d = json.loads((tmp_path / "pde.json").read_text())
    assert d["ok"] and d["violations"] == 0


def test_check_uniqueness(tmp_path):
    assert _run(["check-uniqueness", "--delta", "0.5", "--e-c-mean", "0.3", "--x0", "100,100"], tmp_path) == 0
    d = json.loads((tmp_path / "uniqueness.json").read_text())
    assert d["condition_value"] == pytest.approx(0.45) and d["unique"]


def test_delta_zero_is_config_error(tmp_path, capsys):
    assert _run(["solve", *FAST, "--delta", "0"], tmp_path) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config" and "delta" in err["message"]


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[game]\ndelta = 0.5\nbogus = 1\n")
    assert _run(["simulate", "--config", str(cfg)], tmp_path / "o") == 2
    assert _run(["simulate", "--model", "nope"], tmp_path / "o") == 2


def test_numerical_failure_exit_code(tmp_path, capsys):
    code = _run(["solve", *FAST, "--delta", "0.1", "--e-c-mean", "1.2"], tmp_path)
    assert code == 3
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "numerical"
    assert "ERROR" in (tmp_path / "run.log").read_text()


def test_toml_config_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[model]\nname = "geometric"\n[game]\ndelta = 0.7\nx0 = [1.0, 2.0, 3.0]\n'
                   "[mc]\npaths = 32\ndt = 0.125\n[run]\nseed = 9\n")
    assert main(["check-uniqueness", "--config", str(cfg), "--delta", "0.6", "--out", str(tmp_path / "o")]) == 0
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["config"]["delta"] == 0.6 and m["config"]["x0"] == [1.0, 2.0, 3.0] and m["seed"] == 9
    assert "workers" not in m["config"]


def test_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(["simulate", *FAST, "--workers", "2"], a) == 0
    assert main(["rerun", str(a / "manifest.json"), "--out", str(b)]) == 0
    for name in ("manifest.json", "trajectory.csv", "summary.json", "run.log"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert main(["rerun", str(tmp_path / "missing.json"), "--out", str(b)]) == 2


def test_workers_env(tmp_path, monkeypatch):
    monkeypatch.setenv("MFARB_WORKERS", "x")
    assert _run(["check-uniqueness"], tmp_path) == 2


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "mfarb.cli", "check-uniqueness", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
