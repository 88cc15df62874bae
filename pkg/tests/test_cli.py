import json
import os

import pandas as pd
import pytest

from skclib.cli import lqr_controller, main, robustness_rows
from skclib.envs import make_spec
from skclib.runio import build_config

SMALL_AGENT = {"agent": {"batch_size": 8, "init_steps": 10, "m": 2, "hidden": 8, "critic_hidden": 8,
                         "replay_capacity": 1000, "koopman_horizon": 3, "eigen_every": 10},
               "train": {"eval_episodes": 0, "checkpoint_every": 20}}


def write_config(tmp_path, tree, name="cfg.json"):
    path = str(tmp_path / name)
    with open(path, 'w') as fp:
        json.dump(tree, fp)

    return path


def run_dir(parent, command):
    dirs = [d for d in os.listdir(parent) if d.startswith(command + "_")]
    assert len(dirs) == 1
    return os.path.join(parent, dirs[0])


def finish_flag(rundir):
    with open(os.path.join(rundir, "finish_flag.txt")) as fp:
        return fp.read().strip()


class TestUsage:
    def test_help(self):
        assert main(["fit", "--help"]) == 0

    def test_unknown_command(self):
        assert main(["transmogrify"]) == 2

    def test_missing_env(self, tmp_path, capsys):
        assert main(["fit", "--output_directory", str(tmp_path)]) == 2
        assert "env.name" in capsys.readouterr().err
        assert os.listdir(tmp_path) == []

    def test_unknown_env(self, tmp_path):
        assert main(["fit", "--env", "acrobot", "--output_directory", str(tmp_path)]) == 2

    def test_unknown_config_field(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"fit": {"degree": 3}})
        assert main(["fit", "--env", "msd", "--config", cfg, "--output_directory", str(tmp_path)]) == 2
        assert "fit.degree" in capsys.readouterr().err


class TestFit:
    def test_dense_msd(self, tmp_path):
        out = str(tmp_path / "runs")
        assert main(["fit", "--env", "msd", "--seed", "3", "--output_directory", out]) == 0
        rundir = run_dir(out, "fit")
        curve = pd.read_csv(os.path.join(rundir, "fit_error_curve.csv"))
        assert list(curve["n"]) == [100, 1000, 10000]
        assert curve["errA"].iloc[-1] < 1e-3
        assert finish_flag(rundir) == "SUCCESS"
        for name in ("run_config.json", "run_metadata.json", "timing_log.txt", "fit.log", "fit_model.json"):
            assert os.path.exists(os.path.join(rundir, name))

    def test_run_config_records_hash(self, tmp_path):
        out = str(tmp_path / "runs")
        main(["fit", "--env", "msd", "--n", "200", "--output_directory", out])
        with open(os.path.join(run_dir(out, "fit"), "run_config.json")) as fp:
            saved = json.load(fp)

        assert saved["config"]["fit"]["n"] == 200
        assert saved["hash"][:10] in run_dir(out, "fit")

    def test_spectral_pendulum(self, tmp_path):
        out = str(tmp_path / "runs")
        cfg = write_config(tmp_path, {"fit": {"epochs": 20, "n_traj": 5, "traj_len": 20}})
        assert main(["fit", "--env", "pendulum", "--method", "spectral", "--config", cfg,
                     "--output_directory", out]) == 0
        with open(os.path.join(run_dir(out, "fit"), "fit_model.json")) as fp:
            assert json.load(fp)["m"] == 1


class TestTrain:
    def test_zero_steps(self, tmp_path):
        out = str(tmp_path / "runs")
        cfg = write_config(tmp_path, SMALL_AGENT)
        assert main(["train", "--env", "msd", "--steps", "0", "--config", cfg, "--output_directory", out]) == 0
        rundir = run_dir(out, "train")
        assert os.path.getsize(os.path.join(rundir, "run_record.jsonl")) == 0
        assert os.path.exists(os.path.join(rundir, "agent_final.json"))

    def test_negative_steps(self, tmp_path):
        assert main(["train", "--env", "msd", "--steps", "-1", "--output_directory", str(tmp_path)]) == 2

    def test_same_seed_same_record(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_AGENT)
        records = []
        for name in ("a", "b"):
            out = str(tmp_path / name)
            assert main(["train", "--env", "msd", "--steps", "40", "--seed", "7", "--config", cfg,
                         "--output_directory", out]) == 0
            rundir = run_dir(out, "train")
            with open(os.path.join(rundir, "run_record.jsonl"), 'rb') as fp:
                records.append(fp.read())

            assert os.path.exists(os.path.join(rundir, "checkpoint_step20.json"))

        assert records[0] == records[1]
        assert len(records[0].splitlines()) == 40


class TestRobustness:
    def test_lqr_policy_grid(self, tmp_path):
        out = str(tmp_path / "runs")
        cfg = write_config(tmp_path, {"robustness": {"seeds": 2, "episodes": 1}})
        assert main(["robustness", "--env", "msd", "--policy", "lqr", "--config", cfg,
                     "--output_directory", out]) == 0
        df = pd.read_csv(os.path.join(run_dir(out, "robustness"), "robustness_sweep.csv"))
        assert len(df) == 9
        assert set(df["p"]) == {0.0, 0.1, 0.25}
        assert (df["n"] == 2).all()

    @pytest.mark.slow
    def test_lqr_returns_degrade_with_disturbance_and_noise(self):
        tree = build_config(None, {"env.name": "msd", "robustness.policy": "lqr"})
        G = lqr_controller(make_spec("msd"))
        cells = {(r["p"], r["obs_sigma"]): r["median_seed_mean"] for r in robustness_rows(tree, "lqr", 0, G=G)}
        by_p = [cells[(p, 0.0)] for p in (0.0, 0.1, 0.25)]
        by_sigma = [cells[(0.0, s)] for s in (0.0, 0.05, 0.1)]
        assert by_p[0] >= by_p[1] >= by_p[2]
        assert by_sigma[0] >= by_sigma[1] >= by_sigma[2]

    def test_missing_checkpoint(self, tmp_path):
        out = str(tmp_path / "runs")
        assert main(["robustness", "--env", "msd", "--checkpoint", str(tmp_path / "nope.json"),
                     "--output_directory", out]) == 3
        assert finish_flag(run_dir(out, "robustness")) == "UNSUCCESSFUL"

    def test_checkpoint_required_for_agent_policy(self, tmp_path):
        assert main(["robustness", "--env", "msd", "--output_directory", str(tmp_path)]) == 2


class TestControl:
    def test_msd_known_model(self, tmp_path):
        out = str(tmp_path / "runs")
        assert main(["control", "--env", "msd", "--episodes", "2", "--output_directory", out]) == 0
        rundir = run_dir(out, "control")
        summary = pd.read_csv(os.path.join(rundir, "control_summary.csv"))
        assert len(summary) == 2
        assert (summary["return"] <= 0).all()
        with open(os.path.join(rundir, "control_gain.json")) as fp:
            assert len(json.load(fp)["G"][0]) == 2

    @pytest.mark.slow
    def test_pendulum_is_stabilized(self, tmp_path):
        out = str(tmp_path / "runs")
        assert main(["control", "--env", "pendulum", "--output_directory", out]) == 0
        summary = pd.read_csv(os.path.join(run_dir(out, "control"), "control_summary.csv"))
        assert summary["settled"].sum() >= 4


class TestBenchAndReport:
    def test_reps_too_small(self, tmp_path):
        assert main(["bench", "--reps", "1", "--output_directory", str(tmp_path)]) == 2

    def test_bench_then_report(self, tmp_path):
        out = str(tmp_path / "runs")
        cfg = write_config(tmp_path, {"bench": {"m_grid": [8], "timing_H_grid": [1, 64]}})
        assert main(["bench", "--config", cfg, "--output_directory", out]) == 0
        rundir = run_dir(out, "bench")
        macs = pd.read_csv(os.path.join(rundir, "bench_macs.csv"))
        assert (macs["ordering"] == "PASS").all()
        timing = pd.read_csv(os.path.join(rundir, "bench_timing.csv"))
        assert "hostname" in timing.columns and len(timing) == 4

        assert main(["report", "--inputs", rundir, "--output_directory", out]) == 0
        summary = pd.read_csv(os.path.join(run_dir(out, "report"), "report_summary.csv"))
        assert "bench_macs.csv" in " ".join(summary["source"])

    def test_report_missing_input(self, tmp_path):
        assert main(["report", "--inputs", str(tmp_path / "missing"), "--output_directory", str(tmp_path)]) == 3
