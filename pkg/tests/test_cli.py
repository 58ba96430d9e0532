import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from dynvhc.cli import main

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def scenario(tmp_path, name, *edits, extra=""):
    text = (SCENARIOS / name).read_text()
    for old, new in edits:
        assert old in text, old
        text = text.replace(old, new)
    path = tmp_path / ("edited_" + name)
    path.write_text(text + extra)
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pendulum_design(tmp_path_factory):
    out = tmp_path_factory.mktemp("pend")
    sc = str(SCENARIOS / "pendulum.toml")
    assert run("design", "--scenario", sc, "--out", out) == 0
    return sc, out


def test_malformed_scenario_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[system]\nname = \n")
    assert run("analyze", "--scenario", bad, "--out", tmp_path) == 2
    assert "line 2" in capsys.readouterr().err


def test_semantic_scenario_errors_exit_2(tmp_path):
    unknown = scenario(tmp_path, "pendulum.toml", extra="\n[bogus]\nx = 1\n")
    assert run("analyze", "--scenario", unknown, "--out", tmp_path) == 2
    neg = scenario(tmp_path, "pendulum.toml", ("kp = 100.0", "kp = -1.0"))
    assert run("analyze", "--scenario", neg, "--out", tmp_path) == 2
    assert run("analyze", "--scenario", tmp_path / "missing.toml") == 2
    assert run("run", "--scenario", SCENARIOS / "pendulum.toml", "--steps", 0) == 2


def test_analyze_pendulum(tmp_path, capsys):
    assert run("analyze", "--scenario", SCENARIOS / "pendulum.toml", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "analysis.json").read_text())
    assert all(report["checks"].values())
    assert set(report["checks"]) == {"regularity", "lagrangian", "classification",
                                     "dynamic_regularity", "transversality", "stabilizable"}
    assert report["orbit"]["kind"] == "rotation"
    assert report["orbit"]["energy_level"] == 2.5
    assert report["gramian"]["controllable"]
    assert report["gramian"]["marginal"] is False
    assert "open-loop |mu|" in capsys.readouterr().out


def test_energy_at_potential_minimum_fails_classification(tmp_path, capsys):
    sc = scenario(tmp_path, "pendulum.toml", ("energy_level = 2.5", "energy_level = 0.0"))
    assert run("analyze", "--scenario", sc, "--out", tmp_path) == 1
    assert "classification" in capsys.readouterr().err
    assert json.loads((tmp_path / "analysis.json").read_text())["checks"]["classification"] \
        is False


def test_input_free_ltv_is_rejected(tmp_path, capsys):
    sc = scenario(tmp_path, "scalar_ltv.toml", ("B = [[1.0]]", "B = [[0.0]]"))
    assert run("analyze", "--scenario", sc, "--out", tmp_path) == 1
    assert run("design", "--scenario", sc, "--out", tmp_path) == 1
    err = capsys.readouterr().err
    assert "stabilizable" in err and "gramian" in err


def test_pendulum_without_coupling_spring_is_rejected(tmp_path):
    sc = scenario(tmp_path, "pendulum.toml", ("k = 1.0", "k = 0.0"),
                  ("translation = [1.0, 1.0]", "translation = [0.0, 1.0]"))
    assert run("design", "--scenario", sc, "--out", tmp_path) == 1


def test_scalar_design_matches_closed_form(tmp_path):
    sc = str(SCENARIOS / "scalar_ltv.toml")
    assert run("design", "--scenario", sc, "--out", tmp_path) == 0
    rows = np.loadtxt(tmp_path / "gain.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(rows[:, 1], -1.0, atol=1e-6)
    mult = np.loadtxt(tmp_path / "multipliers.csv", delimiter=",", skiprows=1)
    assert mult[0] == pytest.approx(math.exp(-2 * math.pi), abs=1e-8)
    meta = json.loads((tmp_path / "gain.json").read_text())["metadata"]
    assert len(meta["fingerprint"]) == 64


def test_design_run_round_trip_is_deterministic(pendulum_design, tmp_path, capsys):
    sc, out = pendulum_design
    gain = out / "gain.json"
    outs = []
    for k in range(2):
        d = tmp_path / ("r%d" % k)
        assert run("run", "--scenario", sc, "--gain", gain, "--out", d, "--steps", 1000) == 0
        outs.append(d)
    for f in ("initial_trajectory.csv", "initial_diagnostics.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    lines = (outs[0] / "initial_trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,q1,q2,qd1,qd2,s,sd,e1,E,dist_gammabar" and len(lines) == 1002
    assert "initial: t=1" in capsys.readouterr().out


def test_fingerprint_mismatch_exits_1(pendulum_design, tmp_path, capsys):
    _, out = pendulum_design
    other = scenario(tmp_path, "pendulum.toml", ("energy_level = 2.5", "energy_level = 2.6"))
    assert run("run", "--scenario", other, "--gain", out / "gain.json", "--out", tmp_path,
               "--steps", 10) == 1
    assert "fingerprint" in capsys.readouterr().err


def test_unreadable_gain_file_exits_2(tmp_path):
    bad = tmp_path / "gain.json"
    bad.write_text("{not json")
    assert run("run", "--scenario", SCENARIOS / "pendulum.toml", "--gain", bad,
               "--out", tmp_path, "--steps", 10) == 2


def test_on_orbit_start_keeps_summary_small(pendulum_design, tmp_path):
    _, out = pendulum_design
    sc = scenario(tmp_path, "pendulum.toml", ("energy_offset = 0.3", "energy_offset = 0.0"))
    # Same system and orbit, so the fingerprint still matches.
    assert run("run", "--scenario", sc, "--gain", out / "gain.json", "--out", tmp_path,
               "--steps", 5000) == 0
    summary = json.loads((tmp_path / "run_summary.json").read_text())[0]
    for key in ("energy_error", "s", "sdot", "e"):
        assert summary[key] < 1e-6


def test_batch_with_seed_is_reproducible(pendulum_design, tmp_path):
    _, out = pendulum_design
    extra = "\n[random_batch]\ncount = 2\nscale = 0.01\n"
    sc = scenario(tmp_path, "pendulum.toml", extra=extra)
    dirs = []
    for k, workers in enumerate((1, 2)):
        d = tmp_path / ("b%d" % k)
        assert run("run", "--scenario", sc, "--gain", out / "gain.json", "--out", d,
                   "--steps", 200, "--seed", 7, "--workers", workers) == 0
        dirs.append(d)
    names = [s["name"] for s in json.loads((dirs[0] / "run_summary.json").read_text())]
    assert names == ["initial", "random000", "random001"]
    for name in names:
        f = "%s_trajectory.csv" % name
        assert (dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes()
    first = (dirs[0] / "random000_trajectory.csv").read_text().splitlines()[1]
    assert first != (dirs[0] / "initial_trajectory.csv").read_text().splitlines()[1]


def test_out_of_tube_start_exits_3(pendulum_design, tmp_path, capsys):
    _, out = pendulum_design
    sc = scenario(tmp_path, "pendulum.toml",
                  ("theta = 0.0\nenergy_offset = 0.3", "q = [0.0, 5.0]\nqdot = [1.0, 0.0]"))
    assert run("run", "--scenario", sc, "--gain", out / "gain.json", "--out", tmp_path,
               "--steps", 100) == 3
    assert "aborted at t=0" in capsys.readouterr().err
    assert json.loads((tmp_path / "run_summary.json").read_text())[0]["aborted"]


def test_portrait_export(tmp_path):
    assert run("portrait", "--scenario", SCENARIOS / "pendulum.toml", "--out", tmp_path,
               "--steps", 64) == 0
    lines = (tmp_path / "portrait.csv").read_text().splitlines()
    assert lines[0] == "level,branch,segment,theta,theta_dot"
    assert {float(r.split(",")[0]) for r in lines[1:]} == {0.625, 1.25, 1.875, 2.5, 3.125}


def test_pendulum_end_to_end_converges_in_100_seconds(pendulum_design, tmp_path, capsys):
    sc, out = pendulum_design
    assert run("run", "--scenario", sc, "--gain", out / "gain.json", "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "run_summary.json").read_text())[0]
    assert summary["t"] == pytest.approx(100.0)
    assert summary["energy_error"] < 1e-3


def test_module_entry_point_reports_version():
    res = subprocess.run([sys.executable, "-m", "dynvhc", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and res.stdout.startswith("dynvhc ")
