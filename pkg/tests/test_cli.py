"""End-to-end CLI tests: every command through main() with exit codes."""

import csv
import json

import numpy as np
import pytest

from ratectl.cli import main
from ratectl.config import load_run_config, run_config_from_dict
from ratectl.errors import ConfigError
from ratectl.training import load_checkpoint


def run_config_doc(corpus_dir, out_dir, steps=4):
    return {
        "schema": "ratectl-run/1",
        "seed": 3,
        "corpus": str(corpus_dir),
        "out": str(out_dir),
        "reward": {"mode": "self-compete"},
        "net": {"embedding_dim": 6, "action_bins": 8, "num_quantiles": 4,
                "history_window": 2, "repr_hidden": 6, "dyn_hidden": 6,
                "head_hidden": 6, "res_blocks": 0},
        "search": {"simulations": 6, "act_temp_episodes": 8},
        "train": {"total_steps": steps, "batch_size": 4, "min_episodes": 3,
                  "episodes_per_step": 0.5, "replay_capacity": 8,
                  "lr_init": 0.01, "log_interval": 2},
    }


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    code = main(["gen-corpus", "--seed", "5", "--count", "6", "--out", str(out),
                 "--fps", "30", "--duration-min", "0.12", "--duration-max", "0.2"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, tiny_corpus):
    out = tmp_path_factory.mktemp("run")
    cfg_path = out / "run.json"
    cfg_path.write_text(json.dumps(run_config_doc(tiny_corpus, out / "train")))
    assert main(["train", "--config", str(cfg_path)]) == 0
    ckpts = sorted((out / "train").glob("checkpoint_*.rckpt"))
    assert ckpts
    return ckpts[-1]


class TestGenCorpus:
    def test_deterministic_manifest(self, tmp_path):
        args = ["gen-corpus", "--seed", "7", "--count", "4", "--fps", "2",
                "--duration-min", "2", "--duration-max", "3"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "manifest.json").read_text()
        b = (tmp_path / "b" / "manifest.json").read_text()
        assert a == b

    def test_count_matches_manifest(self, tmp_path):
        main(["gen-corpus", "--seed", "1", "--count", "5", "--out",
              str(tmp_path / "c"), "--fps", "2", "--duration-min", "2",
              "--duration-max", "3"])
        manifest = json.loads((tmp_path / "c" / "manifest.json").read_text())
        assert manifest["count"] == 5 and len(manifest["videos"]) == 5

    def test_creates_missing_directories(self, tmp_path):
        deep = tmp_path / "x" / "y" / "corpus"
        assert main(["gen-corpus", "--seed", "1", "--count", "1", "--out",
                     str(deep), "--fps", "2", "--duration-min", "2",
                     "--duration-max", "2.4"]) == 0
        assert (deep / "manifest.json").exists()


class TestTrain:
    def test_log_lines_parse(self, trained):
        log = trained.parent / "train_log.jsonl"
        lines = log.read_text().splitlines()
        assert lines
        for line in lines:
            assert "loss" in json.loads(line)

    def test_lagrangian_flag(self, tmp_path, tiny_corpus):
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(run_config_doc(tiny_corpus, tmp_path / "t", steps=2)))
        assert main(["train", "--config", str(cfg_path), "--reward", "lagrangian",
                     "--lambda", "1.0"]) == 0
        ckpt = load_checkpoint(sorted((tmp_path / "t").glob("*.rckpt"))[-1])
        assert ckpt.net_config.value_squash is False

    def test_resume_equals_straight_run(self, tmp_path, tiny_corpus):
        doc = run_config_doc(tiny_corpus, tmp_path / "full", steps=4)
        p = tmp_path / "full.json"
        p.write_text(json.dumps(doc))
        assert main(["train", "--config", str(p)]) == 0
        full = sorted((tmp_path / "full").glob("*.rckpt"))[-1]

        doc2 = run_config_doc(tiny_corpus, tmp_path / "parts", steps=2)
        p2 = tmp_path / "parts.json"
        p2.write_text(json.dumps(doc2))
        assert main(["train", "--config", str(p2)]) == 0
        doc3 = run_config_doc(tiny_corpus, tmp_path / "parts", steps=4)
        p3 = tmp_path / "parts4.json"
        p3.write_text(json.dumps(doc3))
        assert main(["train", "--config", str(p3), "--resume"]) == 0
        resumed = sorted((tmp_path / "parts").glob("*.rckpt"))[-1]
        assert resumed.read_bytes() == full.read_bytes()


class TestEvaluate:
    def test_baseline_against_itself_zero_bd(self, tmp_path, tiny_corpus):
        out = tmp_path / "ev"
        assert main(["evaluate", "--test-policy", "heuristic-vbr", "--corpus",
                     str(tiny_corpus), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert abs(report["mean_bd_rate_pct"]) <= 1e-9
        assert report["stderr_bd_rate_pct"] is None

    def test_sweep_row_count(self, tmp_path, tiny_corpus, trained):
        out = tmp_path / "rows"
        assert main(["evaluate", "--checkpoint", str(trained), "--corpus",
                     str(tiny_corpus), "--out", str(out)]) == 0
        with open(out / "rd_curves.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 6 * 9 * 2   # header + videos x targets x policies

    def test_multi_seed_stderr_populated(self, tmp_path, tiny_corpus, trained):
        out = tmp_path / "multi"
        assert main(["evaluate", "--checkpoint", str(trained), "--checkpoint",
                     str(trained), "--corpus", str(tiny_corpus), "--out",
                     str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["seeds"] == 2
        assert report["stderr_bd_rate_pct"] == pytest.approx(0.0, abs=1e-12)

    def test_requires_exactly_one_test_side(self, tmp_path, tiny_corpus):
        assert main(["evaluate", "--corpus", str(tiny_corpus), "--out",
                     str(tmp_path / "x")]) == 2


class TestOracleCmd:
    def test_oracle_vs_itself_zero_gap(self, tmp_path, tiny_corpus):
        out = tmp_path / "o"
        assert main(["oracle", "--corpus", str(tiny_corpus), "--out", str(out),
                     "--targets", "256,512", "--policy", "oracle"]) == 0
        summary = json.loads((out / "gap_report.json").read_text())
        assert summary["mean_psnr_gap_feasible"] == pytest.approx(0.0, abs=1e-9)
        assert summary["feasibility_agreement"] == 1.0

    def test_max_qp_policy_feasible_with_gap(self, tmp_path, tiny_corpus):
        out = tmp_path / "o255"
        assert main(["oracle", "--corpus", str(tiny_corpus), "--out", str(out),
                     "--targets", "768", "--policy", "constant:255"]) == 0
        summary = json.loads((out / "gap_report.json").read_text())
        assert summary["mean_psnr_gap_feasible"] > 3.0

    def test_oversized_videos_skipped(self, tmp_path):
        big = tmp_path / "big"
        main(["gen-corpus", "--seed", "2", "--count", "3", "--out", str(big),
              "--fps", "4", "--duration-min", "2", "--duration-max", "3"])
        out = tmp_path / "og"
        assert main(["oracle", "--corpus", str(big), "--out", str(out),
                     "--targets", "512"]) == 0
        summary = json.loads((out / "gap_report.json").read_text())
        assert summary["skipped_videos"] == 3 and summary["pairs"] == 0


class TestSelftestCmd:
    def test_passes_on_pristine_checkout(self, capsys):
        assert main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "[PASS] reward-truth-table" in out

    def test_corrupted_check_fails_by_name(self, capsys):
        assert main(["selftest", "--corrupt", "reward-truth-table"]) == 1
        out = capsys.readouterr().out
        assert "[FAIL] reward-truth-table" in out


class TestRunConfig:
    def test_unknown_key_rejected(self):
        doc = {"schema": "ratectl-run/1", "mystery": 1}
        with pytest.raises(ConfigError):
            run_config_from_dict(doc)

    def test_unknown_nested_key_rejected(self):
        doc = {"schema": "ratectl-run/1", "train": {"warp_speed": 9}}
        with pytest.raises(ConfigError):
            run_config_from_dict(doc)

    def test_bad_schema_rejected(self):
        with pytest.raises(ConfigError):
            run_config_from_dict({"schema": "ratectl-run/99"})

    def test_lagrangian_unsquashes_value(self):
        doc = {"schema": "ratectl-run/1", "reward": {"mode": "lagrangian"}}
        cfg = run_config_from_dict(doc)
        assert cfg.net.value_squash is False

    def test_seed_propagates_to_train(self):
        cfg = run_config_from_dict({"schema": "ratectl-run/1", "seed": 9})
        assert cfg.train.seed == 9

    def test_bad_json_file(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{nope")
        with pytest.raises(ConfigError):
            load_run_config(p)

    def test_config_error_exit_code(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"schema": "ratectl-run/1", "mystery": 1}))
        assert main(["train", "--config", str(p)]) == 2
