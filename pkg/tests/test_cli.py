import json
import subprocess
import sys

import pytest

from rte_halfspace.cli import cli
from rte_halfspace.config import RunConfig, serialize_config

SMALL = RunConfig(L=8.0, N=16, X_max=4.0, M=33, dt=0.05, T=0.3)


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(serialize_config(SMALL), encoding="utf-8")
    return p


def test_run_writes_outputs(tmp_path, small_cfg, capsys):
    out = tmp_path / "run"
    assert cli(["run", str(small_cfg), "--output-dir", str(out)]) == 0
    for name in ("ledger.csv", "energy_fluxes.csv", "config.cfg", "manifest.json"):
        assert (out / name).is_file()
    man = json.loads((out / "manifest.json").read_text())
    assert man["config_hash"] == SMALL.hash() and man["steps"] == 6
    assert "mass ledger residual" in capsys.readouterr().out


def test_run_twice_identical_ledgers(tmp_path, small_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli(["run", "--config", str(small_cfg), "--output-dir", str(a)]) == 0
    assert cli(["run", str(small_cfg), "--output-dir", str(b), "--threads", "3"]) == 0
    assert (a / "ledger.csv").read_bytes() == (b / "ledger.csv").read_bytes()
    assert (a / "energy_fluxes.csv").read_bytes() == (b / "energy_fluxes.csv").read_bytes()


def test_replay(tmp_path, small_cfg, capsys):
    out = tmp_path / "run"
    cli(["run", str(small_cfg), "--output-dir", str(out)])
    capsys.readouterr()
    assert cli(["replay", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.count("PASS") == 4


def test_replay_detects_tampering(tmp_path, small_cfg):
    out = tmp_path / "run"
    cli(["run", str(small_cfg), "--output-dir", str(out)])
    lines = (out / "ledger.csv").read_text().splitlines()
    cols = lines[-1].split(",")
    cols[1] = repr(float(cols[1]) * 1.5)          # inflate the final mass
    lines[-1] = ",".join(cols)
    (out / "ledger.csv").write_text("\n".join(lines) + "\n")
    assert cli(["replay", str(out)]) == 1


def test_probe_without_snapshots(tmp_path, small_cfg, capsys):
    out = tmp_path / "run"
    cli(["run", str(small_cfg), "--output-dir", str(out)])
    capsys.readouterr()
    assert cli(["probe", str(out)]) == 2
    assert "insufficient snapshots" in capsys.readouterr().err


def test_probe_with_snapshots(tmp_path):
    cfg = SMALL.with_(u0_preset="indicator", u0_params=(1.0, 1.0, 2.0), snapshot_every=2)
    p = tmp_path / "ind.cfg"
    p.write_text(serialize_config(cfg))
    out = tmp_path / "run"
    assert cli(["run", str(p), "--output-dir", str(out)]) == 0
    assert len(list((out / "snapshots").glob("*.rteh"))) == 4
    assert cli(["probe", str(out)]) == 0
    rep = json.loads((out / "probe_report.json").read_text())
    assert rep["fourier_gain"]["s0_half_space"] == 0.03125
    assert "p_hat" in rep["decay_fit"]


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[model]\ns = 1.5\n")
    assert cli(["run", str(bad)]) == 2
    assert "(0, 1)" in capsys.readouterr().err
    assert cli(["run", str(tmp_path / "missing.cfg")]) == 2
    assert cli(["replay", str(tmp_path / "nowhere")]) == 2
    assert cli(["frobnicate"]) == 2
    assert cli(["check", "--only", "13"]) == 2


def test_threads_env(tmp_path, small_cfg, monkeypatch):
    monkeypatch.setenv("RTE_THREADS", "two")
    assert cli(["run", str(small_cfg), "--output-dir", str(tmp_path / "r")]) == 2
    monkeypatch.setenv("RTE_THREADS", "2")
    assert cli(["run", str(small_cfg), "--output-dir", str(tmp_path / "r")]) == 0


def test_numerical_failure_exit_1(tmp_path):
    p = tmp_path / "cfl.cfg"
    p.write_text(serialize_config(SMALL.with_(dt=5.0, T=5.0)))
    assert cli(["run", str(p), "--output-dir", str(tmp_path / "r")]) == 1


def test_check_single_suite(tmp_path, capsys):
    report = tmp_path / "rep.json"
    code = cli(["check", "--only", "3", "--report", str(report)])
    out = capsys.readouterr().out
    assert "criterion  3" in out and "1/1 suites passed" in out
    assert code == 0
    assert json.loads(report.read_text())[0]["passed"] is True


def test_module_entry_point(tmp_path, small_cfg):
    r = subprocess.run([sys.executable, "-m", "rte_halfspace", "run", str(small_cfg),
                        "--output-dir", str(tmp_path / "m")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
