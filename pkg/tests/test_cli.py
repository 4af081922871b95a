"""CLI subcommands, exit codes, and file outputs at desk budgets."""

import json
import subprocess
import sys

import pytest

from metacc import bench
from metacc.cli import main

SCN = "awgn-focused"


@pytest.fixture()
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({
        "meta": {"meta_iterations": 4, "n_way": 3, "k_shot": 2, "l_query": 4},
        "train_counts": [2, 8, 24],
        "test_counts": [1, 8, 10],
        "episodes_per_setup": 3,
        "metric_codewords": 3,
        "metric_samples": 200,
    }))
    return str(p)


def run(tmp_path, cfg_file, *argv):
    return main([*argv, "--out", str(tmp_path / "out"), "--config", cfg_file])


class TestGenData:
    def test_writes_both_roles(self, tmp_path, cfg_file):
        assert run(tmp_path, cfg_file, "gen-data", "--scenario", SCN,
                   "--seed", "7") == 0
        out = tmp_path / "out"
        assert (out / f"{SCN}-meta-train-seed7.mcc").exists()
        assert (out / f"{SCN}-meta-test-seed7.mcc").exists()

    def test_repeat_is_byte_identical(self, tmp_path, cfg_file):
        args = ("gen-data", "--scenario", SCN, "--seed", "3")
        assert run(tmp_path, cfg_file, *args) == 0
        p = tmp_path / "out" / f"{SCN}-meta-train-seed3.mcc"
        first = p.read_bytes()
        assert run(tmp_path, cfg_file, *args) == 0
        assert p.read_bytes() == first

    def test_different_seeds_differ(self, tmp_path, cfg_file):
        run(tmp_path, cfg_file, "gen-data", "--scenario", SCN, "--seed", "1")
        run(tmp_path, cfg_file, "gen-data", "--scenario", SCN, "--seed", "2")
        out = tmp_path / "out"
        assert (out / f"{SCN}-meta-train-seed1.mcc").read_bytes() != \
            (out / f"{SCN}-meta-train-seed2.mcc").read_bytes()


class TestTrainEvalReport:
    def test_full_pipeline(self, tmp_path, cfg_file):
        out = tmp_path / "out"
        assert run(tmp_path, cfg_file, "train", "--scenario", SCN,
                   "--learner", "fomaml,erm", "--seed", "7") == 0
        assert (out / f"{SCN}-fomaml-seed7.ckpt").exists()
        assert (out / f"{SCN}-erm-seed7.ckpt").exists()

        assert run(tmp_path, cfg_file, "eval", "--scenario", SCN,
                   "--learner", "fomaml,erm,viterbi", "--seed", "7") == 0
        rows = bench.read_results_csv(out / "results.csv")
        assert {r.learner for r in rows} == {"fomaml", "erm", "viterbi"}
        assert all(r.scenario == SCN and r.n_episodes == 3 for r in rows)

        assert run(tmp_path, cfg_file, "report") == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["n_rows"] == len(rows)
        assert set(summary["rank_table"]) == {"fomaml", "erm", "viterbi"}
        assert (out / "plotdata" / "breadth.csv").exists()

    def test_train_repeat_checkpoint_identical(self, tmp_path, cfg_file):
        args = ("train", "--scenario", SCN, "--learner", "fomaml",
                "--seed", "5")
        assert run(tmp_path, cfg_file, *args) == 0
        p = tmp_path / "out" / f"{SCN}-fomaml-seed5.ckpt"
        first = p.read_bytes()
        assert run(tmp_path, cfg_file, *args) == 0
        assert p.read_bytes() == first

    def test_eval_appends(self, tmp_path, cfg_file):
        run(tmp_path, cfg_file, "eval", "--scenario", SCN,
            "--learner", "viterbi", "--seed", "1")
        run(tmp_path, cfg_file, "eval", "--scenario", SCN,
            "--learner", "viterbi", "--seed", "2")
        rows = bench.read_results_csv(tmp_path / "out" / "results.csv")
        assert sorted(r.seed for r in rows) == [1, 2]


class TestMetrics:
    def test_diversity_json(self, tmp_path, cfg_file, capsys):
        assert run(tmp_path, cfg_file, "metrics", "diversity",
                   "--scenario", SCN) == 0
        rec = json.loads(capsys.readouterr().out.strip())
        assert rec["scenario"] == SCN
        assert rec["estimator"] == "ksg"
        assert rec["M"] == 3 and rec["n"] == 200
        assert isinstance(rec["value"], float)

    def test_shift_json(self, tmp_path, cfg_file, capsys):
        assert run(tmp_path, cfg_file, "metrics", "shift",
                   "--scenario", SCN) == 0
        rec = json.loads(capsys.readouterr().out.strip())
        assert rec["estimator"] == "knn_kl"
        assert rec["seed"] == bench.METRIC_SEED + 1


class TestExitCodes:
    def test_unknown_scenario_is_config_error(self, tmp_path, cfg_file):
        assert run(tmp_path, cfg_file, "train", "--scenario", "nope",
                   "--learner", "erm") == 2

    def test_unknown_learner_is_config_error(self, tmp_path, cfg_file):
        assert run(tmp_path, cfg_file, "train", "--scenario", SCN,
                   "--learner", "nope") == 2

    def test_missing_scenario_flag(self, tmp_path, cfg_file):
        assert run(tmp_path, cfg_file, "train", "--learner", "erm") == 2

    def test_missing_learner_flag(self, tmp_path, cfg_file):
        assert run(tmp_path, cfg_file, "train", "--scenario", SCN) == 2

    def test_bad_config_json(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["train", "--scenario", SCN, "--learner", "erm",
                     "--config", str(bad)]) == 2

    def test_unknown_config_key(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"metaiterations": 4}')
        assert main(["train", "--scenario", SCN, "--learner", "erm",
                     "--config", str(bad)]) == 2

    def test_config_not_object(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("[1, 2]")
        assert main(["train", "--scenario", SCN, "--learner", "erm",
                     "--config", str(bad)]) == 2

    def test_bad_counts_shape(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"train_counts": [1, 2]}')
        assert main(["gen-data", "--scenario", SCN,
                     "--config", str(bad)]) == 2

    def test_missing_config_file(self):
        assert main(["train", "--scenario", SCN, "--learner", "erm",
                     "--config", "/nonexistent.json"]) == 2

    def test_no_command_prints_help(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().out.lower()

    def test_missing_checkpoint_is_runtime_error(self, tmp_path, cfg_file):
        assert run(tmp_path, cfg_file, "eval", "--scenario", SCN,
                   "--learner", "fomaml", "--seed", "9") == 3

    def test_corrupt_results_is_runtime_error(self, tmp_path, cfg_file):
        out = tmp_path / "out"
        out.mkdir()
        (out / "results.csv").write_text("a,b\n1,2\n")
        # header mismatch raises ValueError inside the command -> exit 3
        assert run(tmp_path, cfg_file, "report") == 3

    def test_missing_results_is_runtime_error(self, tmp_path, cfg_file):
        assert run(tmp_path, cfg_file, "report") == 3


def test_console_entry_point_exit_code():
    # module execution path: exit status must propagate like the script
    proc = subprocess.run(
        [sys.executable, "-m", "metacc.cli", "train", "--scenario", "nope",
         "--learner", "erm"],
        capture_output=True, text=True)
    assert proc.returncode == 2
    assert "unknown scenario" in proc.stderr
