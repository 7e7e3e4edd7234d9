"""Command-line interface: wiring, exit codes, manifests, determinism."""

import json
from pathlib import Path

import numpy as np
import pytest

from flagsim import cli
from flagsim.cli import main, read_manifest, write_manifest
from flagsim.config import preset, save_config
from flagsim.dynamics import ActuationSchedule


def coarse_config():
    cfg = preset("control_sec4").replace(nodes_per_tail=4)
    return cfg.replace(dt=5e-3 * cfg.time_scale())


@pytest.fixture()
def workdir(tmp_path):
    cfg = coarse_config()
    save_config(cfg, tmp_path / "robot.ini")
    ts = cfg.time_scale()
    ActuationSchedule.constant(10.0 / ts, 0.3 * ts).to_csv(
        tmp_path / "sched.csv")
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


class TestManifest:
    def test_round_trip(self, tmp_path):
        write_manifest(tmp_path, "simulate", {"config": "a = 1\n"},
                       [tmp_path / "out.csv"], 1.23456, 9.0)
        m = read_manifest(tmp_path)
        assert m["tool"] == "flagsim"
        assert m["command"] == "simulate"
        assert m["outputs"] == ["out.csv"]
        assert m["inputs"]["config"]["text"] == "a = 1\n"
        assert len(m["inputs"]["config"]["sha256"]) == 64
        assert m["simulated_seconds"] == 9.0

    def test_hash_matches_text(self, tmp_path):
        import hashlib
        write_manifest(tmp_path, "x", {"config": "hello"}, [], 0.0, 0.0)
        m = read_manifest(tmp_path)
        assert m["inputs"]["config"]["sha256"] == \
            hashlib.sha256(b"hello").hexdigest()


class TestSimulate:
    def test_outputs_and_monotone_time(self, workdir):
        out = workdir / "run"
        code = run("simulate", "--config", workdir / "robot.ini",
                   "--schedule", workdir / "sched.csv", "--out", out)
        assert code == 0
        assert (out / "trajectory.csv").exists()
        assert (out / "head_path.csv").exists()
        assert (out / "manifest.json").exists()
        data = np.genfromtxt(out / "trajectory.csv", delimiter=",",
                             skip_header=1)
        assert np.all(np.diff(data[:, 0]) > 0)
        head = np.genfromtxt(out / "head_path.csv", delimiter=",",
                             skip_header=1)
        assert head.shape[1] == 3
        m = read_manifest(out)
        assert sorted(m["outputs"]) == ["head_path.csv", "trajectory.csv"]

    def test_missing_config_field_names_it(self, workdir, capsys):
        text = (workdir / "robot.ini").read_text()
        text = text.replace("c_yr = 2.0\n", "")
        (workdir / "broken.ini").write_text(text)
        code = run("simulate", "--config", workdir / "broken.ini",
                   "--schedule", workdir / "sched.csv",
                   "--out", workdir / "run")
        assert code == 2
        assert "c_yr" in capsys.readouterr().err

    def test_missing_files(self, workdir):
        assert run("simulate", "--config", workdir / "nope.ini",
                   "--schedule", workdir / "sched.csv",
                   "--out", workdir / "r") == 2
        assert run("simulate", "--config", workdir / "robot.ini",
                   "--schedule", workdir / "nope.csv",
                   "--out", workdir / "r") == 2

    def test_deterministic_reruns(self, workdir):
        outs = []
        for name in ("a", "b"):
            out = workdir / name
            assert run("simulate", "--config", workdir / "robot.ini",
                       "--schedule", workdir / "sched.csv",
                       "--out", out) == 0
            outs.append((out / "trajectory.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_inputs_not_mutated(self, workdir):
        before = (workdir / "robot.ini").read_bytes()
        run("simulate", "--config", workdir / "robot.ini",
            "--schedule", workdir / "sched.csv", "--out", workdir / "r")
        assert (workdir / "robot.ini").read_bytes() == before


class TestSweep:
    def test_row_counting(self, workdir):
        (workdir / "sweep.ini").write_text(
            "[sweep]\nomega_bar = 5 10 20\n"
            "[run]\nduration_scale = 1.0\nwindow_frac = 0.5\n")
        out = workdir / "sw"
        assert run("sweep", "--config", workdir / "robot.ini",
                   "--sweep-spec", workdir / "sweep.ini", "--out", out) == 0
        lines = (out / "sweep_summary.csv").read_text().strip().split("\n")
        assert lines[0] == ("omega_bar,omega_bar_h,omega_bar_yr,"
                            "R_yr_over_l,theta_heading_rad,error")
        assert len(lines) == 4
        assert [ln.split(",")[0] for ln in lines[1:]] == ["5", "10", "20"]

    def test_unknown_parameter(self, workdir):
        (workdir / "sweep.ini").write_text("[sweep]\ngravity = 1 2\n")
        assert run("sweep", "--config", workdir / "robot.ini",
                   "--sweep-spec", workdir / "sweep.ini",
                   "--out", workdir / "sw") == 2

    def test_empty_grid(self, workdir):
        (workdir / "sweep.ini").write_text("[sweep]\nomega_bar =\n")
        assert run("sweep", "--config", workdir / "robot.ini",
                   "--sweep-spec", workdir / "sweep.ini",
                   "--out", workdir / "sw") == 2
        (workdir / "sweep2.ini").write_text("[sweep]\n")
        assert run("sweep", "--config", workdir / "robot.ini",
                   "--sweep-spec", workdir / "sweep2.ini",
                   "--out", workdir / "sw") == 2

    def test_sweep_config_ratios(self):
        base = coarse_config()
        cfg = cli.sweep_config(base, {"l_over_R": 5.0, "L_over_R": 4.0,
                                      "l_over_r0": 25.0, "N": 3.0,
                                      "C_t": 1.5})
        assert cfg.l == pytest.approx(5.0 * base.R)
        assert cfg.L_head == pytest.approx(4.0 * base.R)
        assert cfg.r0 == pytest.approx(cfg.l / 25.0)
        assert cfg.N == 3
        assert cfg.C_t == 1.5
        # relative time resolution preserved
        assert cfg.dt / cfg.time_scale() == pytest.approx(
            base.dt / base.time_scale())


class TestCharacterize:
    def test_zero_omega_bar(self, workdir):
        assert run("characterize", "--config", workdir / "robot.ini",
                   "--out", workdir / "ch", "--omega-bar", 0.0) == 2

    def test_report(self, workdir):
        out = workdir / "ch"
        assert run("characterize", "--config", workdir / "robot.ini",
                   "--out", out, "--omega-bar", 10.0,
                   "--duration-scale", 6.0) == 0
        report = (out / "primitive.txt").read_text()
        values = dict(line.split(": ") for line in report.strip().split("\n"))
        assert float(values["omega_bar_H"]) == pytest.approx(10.0, rel=1e-9)
        assert float(values["R_yr_m"]) > 0
        assert float(values["omega_yr_rad_s"]) != 0


class TestCalibrate:
    def test_bad_measurement_file(self, workdir):
        (workdir / "meas.csv").write_text("bogus,header\n1,2\n")
        assert run("calibrate", "--config", workdir / "robot.ini",
                   "--measurements", workdir / "meas.csv",
                   "--out", workdir / "cal") == 2

    def test_too_few_measurements(self, workdir):
        (workdir / "meas.csv").write_text(
            "N,l_m,omega_motor_rad_s,omega_h_rad_s,omega_yr_rad_s\n"
            "3,0.11,4.5,1.2,-0.03\n")
        assert run("calibrate", "--config", workdir / "robot.ini",
                   "--measurements", workdir / "meas.csv",
                   "--out", workdir / "cal") == 3


class TestPlan:
    def test_bad_path_spec(self, workdir):
        (workdir / "path.ini").write_text("[path]\nvariant = spiral\n")
        assert run("plan", "--config", workdir / "robot.ini",
                   "--path-spec", workdir / "path.ini",
                   "--out", workdir / "pl") == 2

    def test_line_plan_outputs(self, workdir):
        (workdir / "path.ini").write_text(
            "[path]\nvariant = line\nlength_m = 0.3\n")
        out = workdir / "pl"
        assert run("plan", "--config", workdir / "robot.ini",
                   "--path-spec", workdir / "path.ini", "--out", out,
                   "--omega-bar", 10.0, "--duration-scale", 6.0) == 0
        sched = ActuationSchedule.from_csv(out / "schedule.csv")
        vals = sched.values()
        assert len(vals) == 2
        assert vals[0] == pytest.approx(-vals[1])
        assert (out / "primitive.txt").exists()
        m = read_manifest(out)
        assert m["command"] == "plan"
        assert "verification.csv" not in m["outputs"]
