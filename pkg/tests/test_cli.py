import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from multiblowup.cli import (
    EXIT_ERROR,
    EXIT_OK,
    EXIT_REPORT,
    EXIT_RESOURCE,
    EXIT_SCHEMA,
    main,
    read_checkpoint,
    report,
    run,
    validate_config,
    write_checkpoint,
)
from multiblowup.errors import ConfigError
from multiblowup.grid import Field, Grid

SOLITON = {
    "grid": {"dimension": 1, "box_length": 40.0, "n_points": 1024},
    "initial": {"kind": "soliton", "params": {"lam": 1.0}},
    "solver": {"dt_fixed": 1e-3, "output_dt": 0.1, "stop": {"t_end": 0.5}},
}


def write_config(tmp_path, doc, name="config.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        grid = Grid.cube(2, 8.0, 16)
        rng = np.random.default_rng(0)
        f = Field(grid, rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape), 0.25)
        write_checkpoint(tmp_path / "a.chk", f, "abc")
        g, header = read_checkpoint(tmp_path / "a.chk")
        assert np.array_equal(g.values, f.values) and g.time == 0.25
        assert header["config_hash"] == "abc" and header["dtype"] == "<c16"
        assert (g.grid.dimension, g.grid.box_length, g.grid.n_points) == (2, (8.0, 8.0), (16, 16))

    def test_layout(self, tmp_path):
        f = Field(Grid.cube(1, 1.0, 4), np.arange(4).astype(complex))
        write_checkpoint(tmp_path / "a.chk", f)
        raw = (tmp_path / "a.chk").read_bytes()
        assert raw[:8] == b"MBLWCHK\x00"
        assert raw[-64:] == np.arange(4).astype("<c16").tobytes()

    @pytest.mark.parametrize("mutate", [lambda b: b"XXXXXXXX" + b[8:], lambda b: b[:-8]])
    def test_rejects_corrupt(self, tmp_path, mutate):
        f = Field(Grid.cube(1, 1.0, 4), np.ones(4, complex))
        write_checkpoint(tmp_path / "a.chk", f)
        (tmp_path / "b.chk").write_bytes(mutate((tmp_path / "a.chk").read_bytes()))
        with pytest.raises(ConfigError):
            read_checkpoint(tmp_path / "b.chk")


class TestSchema:
    @pytest.mark.parametrize("doc, mode", [
        ({"ground": {"dimension": 1, "colour": 3}}, "ground"),
        ({"ground": {}, "extra": {}}, "ground"),
        ({}, "ground"),
        ({**SOLITON, "initial": {"kind": "vortex"}}, "evolve"),
        ({**SOLITON, "solver": {"stop": {"t_final": 1.0}}}, "evolve"),
        ({"ground": {}, "mode": "profile"}, "ground"),
        ({"ground": {}, "seed": "x"}, "ground"),
        ({"diagnose": {}}, "diagnose"),
    ])
    def test_violations(self, doc, mode):
        with pytest.raises(ConfigError):
            validate_config(doc, mode)

    def test_exit_code(self, tmp_path):
        cfg = write_config(tmp_path, {"ground": {"bogus": 1}})
        assert run("ground", cfg, tmp_path / "out") == EXIT_SCHEMA
        assert not (tmp_path / "out").exists()

    def test_unreadable(self, tmp_path):
        (tmp_path / "c.json").write_text("{not json")
        assert run("ground", tmp_path / "c.json", tmp_path / "out") == EXIT_SCHEMA


class TestModes:
    def test_ground(self, tmp_path):
        out = tmp_path / "g"
        assert run("ground", write_config(tmp_path, {"ground": {"dimension": 1}}), out) == EXIT_OK
        man = manifest(out)
        assert set(man["files"]) == {"ground.csv", "ground_report.json"}
        for name, h in man["files"].items():
            assert digest(out / name) == h
        assert man["versions"]["kernels"] in {"cython", "python"}
        rep = json.loads((out / "ground_report.json").read_text())
        assert rep["pass"]

    def test_profile_with_radiation(self, tmp_path):
        out = tmp_path / "p"
        doc = {"profile": {"b": [0.2, 0.3], "radiation": True}}
        assert run("profile", write_config(tmp_path, doc), out) == EXIT_OK
        names = set(manifest(out)["files"])
        assert {"profile_b0.2.csv", "profile_b0.3.csv", "radiation_b0.2.csv", "profiles_report.json"} <= names

    def test_evolve_soliton(self, tmp_path):
        out = tmp_path / "e"
        assert run("evolve", write_config(tmp_path, SOLITON), out) == EXIT_OK
        trace = np.genfromtxt(out / "trace.csv", delimiter=",", names=True)
        assert len(trace) == 6
        assert np.ptp(trace["mass"]) < 1e-12 * trace["mass"][0]
        assert np.allclose(trace["lambda"], 1.0, rtol=1e-3)
        final, header = read_checkpoint(out / "final.chk")
        assert final.time == pytest.approx(0.5)
        assert header["config_hash"] == manifest(out)["config_sha256"]

    def test_deterministic(self, tmp_path):
        cfg = write_config(tmp_path, SOLITON)
        assert run("evolve", cfg, tmp_path / "a") == EXIT_OK
        assert run("evolve", cfg, tmp_path / "b") == EXIT_OK
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()

    def test_zero_field(self, tmp_path):
        doc = {**SOLITON, "initial": {"kind": "zero"}}
        out = tmp_path / "z"
        assert run("evolve", write_config(tmp_path, doc), out) == EXIT_OK
        trace = np.atleast_1d(np.genfromtxt(out / "trace.csv", delimiter=",", names=True))
        assert len(trace) == 1
        rep = json.loads((out / "evolve_report.json").read_text())
        assert rep["extra"]["stop_reason"] == "zero_field"

    def test_restart_from_checkpoint(self, tmp_path):
        cfg = write_config(tmp_path, SOLITON)
        run("evolve", cfg, tmp_path / "a")
        doc = {**SOLITON, "initial": {"kind": "checkpoint", "path": "a/final.chk"},
               "solver": {"dt_fixed": 1e-3, "stop": {"t_end": 0.6}}}
        assert run("evolve", write_config(tmp_path, doc, "restart.json"), tmp_path / "b") == EXIT_OK
        first, _ = read_checkpoint(tmp_path / "b" / "initial.chk")
        assert first.time == pytest.approx(0.5)

    def test_decompose(self, tmp_path):
        doc = {"decompose": {"bubble": {"b": 0.25, "lambda": 0.5, "x": [0.3], "gamma": 0.1},
                             "n_points": 2048}}
        out = tmp_path / "d"
        assert run("decompose", write_config(tmp_path, doc), out) == EXIT_OK
        rep = json.loads((out / "decompose_report.json").read_text())
        assert rep["pass"]

    def test_diagnose_soliton(self, tmp_path):
        doc = {**SOLITON, "diagnose": {}}
        out = tmp_path / "q"
        assert run("diagnose", write_config(tmp_path, doc), out) == EXIT_OK
        rep = json.loads((out / "diagnose_report.json").read_text())
        assert {c["name"] for c in rep["checks"]} >= {"mass_drift", "energy_drift"}

    def test_failed_inequality_exit(self, tmp_path):
        doc = {**SOLITON, "diagnose": {"energy_tol": 0.0}}
        assert run("diagnose", write_config(tmp_path, doc), tmp_path / "q") == EXIT_REPORT

    def test_rescaled(self, tmp_path):
        doc = {"rescaled": {"b0": 0.3, "log_lambda0": -200.0, "box_length": 60.0, "n_points": 512,
                            "config": {"s_max": 0.3, "output_ds": 0.1}}}
        out = tmp_path / "r"
        status = run("rescaled", write_config(tmp_path, doc), out)
        assert status in (EXIT_OK, EXIT_REPORT)
        names = set(manifest(out)["files"])
        assert {"bubble_0.csv", "final.chk", "rescaled_report.json"} <= names

    def test_multibubble(self, tmp_path):
        spec = {"bubbles": [{"b": 0.3, "lambda": 0.08, "x": [-8.0]}, {"b": 0.3, "lambda": 0.08, "x": [8.0]}],
                "box_length": 40.0, "n_points": 16384, "energy_correction": True}
        doc = {"multibubble": {"spec": spec, "validate": True, "exterior": {"geometry_scale": 100.0}},
               "solver": {"dt_safety": 0.05, "linear_weight": 1e12, "output_dt": 2e-4, "stop": {"t_end": 6e-4}}}
        out = tmp_path / "m"
        status = run("multibubble", write_config(tmp_path, doc), out)
        assert status in (EXIT_OK, EXIT_REPORT)
        names = set(manifest(out)["files"])
        assert {"initial.chk", "well_prepared.json", "bubble_0.csv", "bubble_1.csv", "exterior.csv",
                "final.chk", "multibubble_report.json"} <= names
        assert report(out) == EXIT_OK
        rep = json.loads((out / "report.json").read_text())
        assert [b["index"] for b in rep["bubbles"]] == [0, 1]
        assert (out / "plot_loglog_1.csv").exists() and (out / "plot_exterior.csv").exists()


class TestLimits:
    def test_memory(self, tmp_path):
        doc = {**SOLITON, "limits": {"memory_mb": 0.001}}
        assert run("evolve", write_config(tmp_path, doc), tmp_path / "o") == EXIT_RESOURCE

    def test_wall_clock(self, tmp_path):
        doc = {**SOLITON, "limits": {"wall_clock": 0.0}, "solver": {"dt_fixed": 1e-4, "stop": {"t_end": 10.0}}}
        out = tmp_path / "o"
        assert run("evolve", write_config(tmp_path, doc), out) == EXIT_RESOURCE
        assert manifest(out)["exit_code"] == EXIT_RESOURCE
        assert "final.chk" in manifest(out)["files"]


class TestReport:
    @pytest.fixture
    def done(self, tmp_path):
        out = tmp_path / "e"
        run("evolve", write_config(tmp_path, SOLITON), out)
        return out

    def test_report_and_rerun(self, done):
        assert report(done) == EXIT_OK
        man = manifest(done)
        assert "report.json" in man["report_files"]
        assert report(done) == EXIT_OK

    def test_refuses_unreferenced(self, done):
        (done / "stray.txt").write_text("x")
        assert report(done) == EXIT_ERROR
        assert not (done / "report.json").exists()

    def test_refuses_tampered(self, done):
        (done / "trace.csv").write_text("t\n0\n")
        assert report(done) == EXIT_ERROR

    def test_missing_manifest(self, tmp_path):
        assert report(tmp_path) == EXIT_ERROR


class TestEntryPoint:
    def test_main(self, tmp_path):
        cfg = write_config(tmp_path, {"ground": {}})
        assert main(["run", "ground", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "7"]) == 0
        assert manifest(tmp_path / "o")["seed"] == 7
        assert main(["report", str(tmp_path / "o")]) == 0

    def test_bad_arguments(self):
        assert main(["run", "nosuchmode", "--config", "x"]) == EXIT_SCHEMA

    def test_env_out(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MULTIBLOWUP_OUT", str(tmp_path / "env"))
        run("ground", write_config(tmp_path, {"ground": {}}), tmp_path / "ignored")
        assert (tmp_path / "env" / "manifest.json").exists()

    def test_console_script(self, tmp_path):
        cfg = write_config(tmp_path, {"ground": {}})
        proc = subprocess.run([sys.executable, "-m", "multiblowup.cli", "run", "ground", "--config", str(cfg),
                               "--out", str(tmp_path / "o")], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
