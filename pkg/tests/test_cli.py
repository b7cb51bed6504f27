import csv
import json
from pathlib import Path

import numpy as np
import pytest

from riskmmd import cli
from riskmmd import config as C

DATA = Path(__file__).parent / "data"

PLAN_CFG = """
[run]
seed = 3
[vehicle]
horizon = 40
[noise]
preset = static_low_gaussian
[optimizer]
method = mmd
N = 2
n = 40
n_c = 15
n_e = 5
iters = 3
[scene]
kind = explicit
v_d = 5
"""

SMALL_OPT = """
[vehicle]
horizon = 30
[optimizer]
n = 20
n_c = 10
n_e = 5
iters = 2
[distill]
cem_samples = 8
cem_iters = 2
"""

BENCH_CFG = SMALL_OPT + """
[run]
seed = 1
[benchmark]
scenarios = 0, 1
n_values = 2, 3
methods = mmd, det
noise = static_low_gaussian
M = 100
retries = 0
"""

MPC_CFG = SMALL_OPT + """
[run]
seed = 2
[scene]
kind = explicit
v_d = 5
obstacles = 12 3.5 2 1
[mpc]
episodes = 1
methods = mmd, det
noise = mpc_gaussian, mpc_beta
route_length = 4
max_steps = 10
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def rows(path):
    return cli.read_csv_rows(path)


class TestConfig:
    def test_missing_horizon_names_key(self):
        cp = C.parse_text("[vehicle]\nwheelbase = 2.5\n")
        with pytest.raises(C.ConfigError, match="horizon"):
            C.vehicle_params(cp)

    def test_bad_value_names_key(self):
        cp = C.parse_text("[vehicle]\nhorizon = forty\n")
        with pytest.raises(C.ConfigError, match="horizon"):
            C.vehicle_params(cp)

    def test_syntax_error_reports_line(self):
        with pytest.raises(C.ConfigError, match="line"):
            C.parse_text("[run]\nseed = 1\nthis line is broken\n")

    def test_all_presets_ship(self):
        names = set(C.preset_names())
        for scope in ("static", "dynamic"):
            for level in ("low", "high"):
                for fam in ("gaussian", "beta"):
                    assert f"{scope}_{level}_{fam}" in names
        assert {"mpc_gaussian", "mpc_beta"} <= names

    def test_preset_constants(self):
        nm = C.noise_model(C.parse_text("[noise]\npreset = static_low_gaussian\n"))
        assert (nm.family, nm.c_a1, nm.c_a2, nm.c_th1, nm.c_th2) == ("gaussian", 0.1, 0.001, 0.1, 0.001)
        nm = C.noise_model(C.parse_text("[noise]\npreset = mpc_gaussian\n"))
        assert (nm.c_a1, nm.c_a2, nm.c_th1, nm.c_th2) == (0.3, 0.3, 0.3, 0.01)

    def test_preset_override(self):
        nm = C.noise_model(C.parse_text("[noise]\npreset = static_low_gaussian\nc_a1 = 0.5\n"))
        assert nm.c_a1 == 0.5 and nm.c_a2 == 0.001

    def test_case_sensitive_keys(self):
        cfg = C.optimizer_config(C.parse_text("[optimizer]\nn = 50\nN = 3\nn_c = 20\nn_e = 5\n"))
        assert cfg.n == 50 and cfg.N == 3

    def test_explicit_scene(self):
        x0, sc = C.scene(C.parse_text("[scene]\nobstacles = 10 0 4 1.8; 20 3.5 4 1.8 1 0\n"))
        assert len(sc.obstacles) == 2 and sc.obstacles[1].vs == 1.0
        assert x0.v == sc.v_d

    def test_bad_obstacle(self):
        with pytest.raises(C.ConfigError, match="obstacles"):
            C.scene(C.parse_text("[scene]\nobstacles = 10 0 4\n"))

    def test_benchmark_spec_validation(self):
        with pytest.raises(C.ConfigError, match="M"):
            C.benchmark_spec(C.parse_text(
                "[benchmark]\nscenarios = 0\nn_values = 2\nnoise = static_low_gaussian\nM = 10\n"))
        spec = C.benchmark_spec(C.parse_text(
            "[benchmark]\nscenarios = 0:5\nn_values = 2\nnoise = static_low_gaussian\n"))
        assert spec.scenarios == (0, 1, 2, 3, 4)

    def test_config_hash_ignores_layout(self):
        a = C.parse_text("[run]\nseed = 1\n[vehicle]\nhorizon = 40\n")
        b = C.parse_text("[vehicle]\nhorizon   =   40\n\n# note\n[run]\nseed = 1\n")
        assert C.config_hash(a) == C.config_hash(b)


class TestThreads:
    def test_flag_wins(self, monkeypatch):
        monkeypatch.setenv("RISKMMD_THREADS", "4")
        assert cli.thread_count(2) == 2

    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("RISKMMD_THREADS", "3")
        assert cli.thread_count(None) == 3
        monkeypatch.delenv("RISKMMD_THREADS")
        assert cli.thread_count(None) == 1

    def test_bad_env(self, monkeypatch):
        monkeypatch.setenv("RISKMMD_THREADS", "many")
        with pytest.raises(C.ConfigError):
            cli.thread_count(None)


class TestExitCodes:
    def test_missing_horizon(self, tmp_path, capsys):
        path = write(tmp_path, PLAN_CFG.replace("horizon = 40", ""))
        assert cli.main(["plan", "--config", path]) == 2
        assert "horizon" in capsys.readouterr().err

    def test_unknown_command(self):
        assert cli.main(["fly"]) == 2

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["plan", "--config", str(tmp_path / "nope.ini")]) == 2

    def test_runtime_failure(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        path = write(tmp_path, PLAN_CFG)
        assert cli.main(["plan", "--config", path, "--out", str(blocker / "sub")]) == 3


class TestPlan:
    def test_obstacle_free_and_deterministic(self, tmp_path, capsys):
        path = write(tmp_path, PLAN_CFG)
        assert cli.main(["plan", "--config", path, "--out", str(tmp_path / "a")]) == 0
        first = capsys.readouterr().out
        assert cli.main(["plan", "--config", path, "--out", str(tmp_path / "b")]) == 0
        assert capsys.readouterr().out == first
        rec = json.loads(first)
        assert rec["risk"] < 1e-3 and rec["seed"] == 3 and len(rec["config_hash"]) == 16
        assert (tmp_path / "a" / "plan.jsonl").read_bytes() == (tmp_path / "b" / "plan.jsonl").read_bytes()

    def test_seed_override(self, tmp_path, capsys):
        path = write(tmp_path, PLAN_CFG)
        cli.main(["plan", "--config", path, "--seed", "9"])
        assert json.loads(capsys.readouterr().out)["seed"] == 9


class TestBenchmark:
    def test_cardinality_det_rows_and_schema(self, tmp_path):
        path = write(tmp_path, BENCH_CFG)
        assert cli.main(["benchmark", "--config", path, "--out", str(tmp_path / "o")]) == 0
        out = tmp_path / "o" / "benchmark.csv"
        assert out.read_text().startswith("# schema_version=1\n")
        got = rows(out)
        assert len(got) == 8
        assert {(r["scenario_id"], r["method"], r["N"]) for r in got} == {
            (s, m, n) for s in ("0", "1") for m in ("mmd", "det") for n in ("2", "3")}
        for r in got:
            assert r["seed"] == "1" and r["config_hash"]
            assert 0.0 <= float(r["gt_collision_rate"]) <= 1.0
            if r["method"] == "det":
                assert float(r["risk_value"]) == 0.0
            assert r["certificate"] in ("ok", "n/a")

    def test_resume_idempotent(self, tmp_path):
        path = write(tmp_path, BENCH_CFG)
        out = tmp_path / "o"
        cli.main(["benchmark", "--config", path, "--out", str(out)])
        full = rows(out / "benchmark.csv")
        # simulate a crash after three rows
        lines = (out / "benchmark.csv").read_text().splitlines(keepends=True)
        (out / "benchmark.csv").write_text("".join(lines[:5]))
        assert cli.main(["benchmark", "--config", path, "--out", str(out), "--resume"]) == 0
        again = rows(out / "benchmark.csv")
        assert len(again) == 8
        strip = lambda rs: sorted(tuple(v for k, v in r.items() if k != "runtime_ms") for r in rs)
        assert strip(again) == strip(full)
        cli.main(["benchmark", "--config", path, "--out", str(out), "--resume"])
        assert len(rows(out / "benchmark.csv")) == 8

    def test_thread_count_does_not_change_results(self, tmp_path):
        path = write(tmp_path, BENCH_CFG)
        cli.main(["benchmark", "--config", path, "--out", str(tmp_path / "t1"), "--threads", "1"])
        cli.main(["benchmark", "--config", path, "--out", str(tmp_path / "t2"), "--threads", "2"])
        drop = lambda rs: [{k: v for k, v in r.items() if k != "runtime_ms"} for r in rs]
        assert drop(rows(tmp_path / "t1" / "benchmark.csv")) == drop(rows(tmp_path / "t2" / "benchmark.csv"))

    def test_refuses_headerless_resume(self, tmp_path):
        path = write(tmp_path, BENCH_CFG)
        (tmp_path / "o").mkdir()
        (tmp_path / "o" / "benchmark.csv").write_text("scenario_id,method\n")
        assert cli.main(["benchmark", "--config", path, "--out", str(tmp_path / "o"), "--resume"]) == 2


class TestMPC:
    def test_grid_shape_and_reruns(self, tmp_path, capsys):
        path = write(tmp_path, MPC_CFG)
        assert cli.main(["mpc", "--config", path, "--out", str(tmp_path / "a")]) == 0
        first = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
        assert len(first) == 4
        assert {(m["method"], m["noise_preset"]) for m in first} == {
            (a, b) for a in ("mmd", "det") for b in ("mpc_gaussian", "mpc_beta")}
        cli.main(["mpc", "--config", path, "--out", str(tmp_path / "b")])
        assert [json.loads(l) for l in capsys.readouterr().out.splitlines()] == first
        text = (tmp_path / "a" / "metrics.csv").read_text()
        assert text.startswith("# schema_version=1\n")
        assert (tmp_path / "a" / "metrics.dat").exists()
        assert len((tmp_path / "a" / "episodes.jsonl").read_text().splitlines()) == 4

    def test_resume_skips_done_episodes(self, tmp_path, capsys):
        path = write(tmp_path, MPC_CFG)
        cli.main(["mpc", "--config", path, "--out", str(tmp_path)])
        first = capsys.readouterr().out
        cli.main(["mpc", "--config", path, "--out", str(tmp_path), "--resume"])
        assert capsys.readouterr().out == first
        assert len((tmp_path / "episodes.jsonl").read_text().splitlines()) == 4


class TestDistill:
    def test_identical_rows(self, tmp_path, capsys):
        f = tmp_path / "same.csv"
        np.savetxt(f, np.ones((4, 6)), delimiter=",")
        assert cli.main(["distill", "--rollouts", str(f), "--N", "1"]) == 0
        rec = json.loads(capsys.readouterr().out)
        assert rec["discrepancy"] < 1e-9 and rec["beta"] == [1.0]

    def test_golden_output(self, capsys):
        assert cli.main(["distill", "--rollouts", str(DATA / "rollouts_sample.csv"),
                         "--N", "4", "--seed", "7"]) == 0
        got = json.loads(capsys.readouterr().out)
        ref = json.loads((DATA / "distill_golden.json").read_text())
        assert got["indices"] == ref["indices"]
        for key in ("sigma", "discrepancy", "random_subset_discrepancy"):
            assert got[key] == pytest.approx(ref[key], rel=1e-9, abs=1e-12)
        assert np.allclose(got["beta"], ref["beta"], rtol=0, atol=1e-9)
        assert got["discrepancy"] <= got["random_subset_discrepancy"]

    def test_non_square(self, tmp_path):
        f = tmp_path / "five.csv"
        np.savetxt(f, np.random.default_rng(0).normal(size=(5, 3)), delimiter=",")
        assert cli.main(["distill", "--rollouts", str(f), "--N", "2"]) == 2

    def test_N_exceeds_rows(self, tmp_path, capsys):
        f = tmp_path / "four.csv"
        np.savetxt(f, np.random.default_rng(0).normal(size=(4, 3)), delimiter=",")
        assert cli.main(["distill", "--rollouts", str(f), "--N", "5"]) == 2
        assert "N" in capsys.readouterr().err

    def test_missing_rollouts(self):
        assert cli.main(["distill", "--N", "2"]) == 2
