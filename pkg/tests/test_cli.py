"""Tests for the command-line interface"""

import csv
from unittest.mock import patch

import pytest
import yaml
from typer.testing import CliRunner

from shapeprior import __version__
from shapeprior.cli import app

runner = CliRunner()

TINY_CONFIG = {
    "seed": 5,
    "data": {"train_count": 3, "val_count": 2, "test_count": 2, "train_label_noise": 0.2},
    "phantom": {
        "height": 16,
        "width": 16,
        "noise_std": 0.02,
        "organs": [
            {"name": "big", "min_area": 20, "max_area": 50, "intensity_low": 0.6, "intensity_high": 0.7},
            {"name": "dot", "min_area": 4, "max_area": 12, "intensity_low": 0.9, "intensity_high": 0.95},
        ],
    },
    "net": {"depth": 1, "base_channels": 2, "num_classes": 3},
    "train": {"max_epochs": 1, "batch_size": 2},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY_CONFIG))
    return path


@pytest.fixture
def dataset(tmp_path, tiny_config):
    root = tmp_path / "data"
    result = runner.invoke(app, ["gen", "--config", str(tiny_config), "--out", str(root)])
    assert result.exit_code == 0, result.output
    return root


class TestBasics:
    """Version and config commands"""

    def test_version(self):
        result = runner.invoke(app, ["--version"])
        assert result.exit_code == 0
        assert __version__ in result.output

    def test_config_prints_resolved(self, tiny_config):
        result = runner.invoke(app, ["config", "--config", str(tiny_config), "--arm", "both"])
        assert result.exit_code == 0
        assert "arm: both" in result.output

    def test_invalid_config_exit_code(self, tmp_path):
        path = tmp_path / "bad.yaml"
        bad = dict(TINY_CONFIG)
        bad["phantom"] = dict(TINY_CONFIG["phantom"])
        bad["phantom"]["organs"] = [dict(TINY_CONFIG["phantom"]["organs"][0], min_area=60)] + \
            TINY_CONFIG["phantom"]["organs"][1:]
        path.write_text(yaml.safe_dump(bad))
        result = runner.invoke(app, ["gen", "--config", str(path), "--out", str(tmp_path / "d")])
        assert result.exit_code == 2

    def test_unknown_arm_rejected(self):
        result = runner.invoke(app, ["train", "--arm", "everything"])
        assert result.exit_code != 0


class TestGen:
    """Dataset generation"""

    def test_writes_three_splits(self, dataset):
        for name in ("train", "val", "test"):
            assert (dataset / name / "manifest").is_file()
        assert (dataset / "resolved_config.yaml").is_file()

    def test_rerun_is_byte_identical(self, tmp_path, tiny_config, dataset):
        other = tmp_path / "again"
        runner.invoke(app, ["gen", "--config", str(tiny_config), "--out", str(other)])
        for path in dataset.rglob("*"):
            # resolved_config.yaml records the output path itself
            if path.is_file() and path.name != "resolved_config.yaml":
                assert path.read_bytes() == (other / path.relative_to(dataset)).read_bytes()


class TestTrainAndEval:
    """Single-arm training and checkpoint evaluation"""

    def read_log(self, path):
        with open(path, newline="") as f:
            return list(csv.DictReader(f))

    def test_baseline_columns_zero(self, tmp_path, tiny_config, dataset):
        out = tmp_path / "run"
        result = runner.invoke(app, ["train", "--config", str(tiny_config), "--dataset", str(dataset),
                                     "--out", str(out), "--arm", "baseline"])
        assert result.exit_code == 0, result.output
        rows = self.read_log(out / "epochs.csv")
        assert rows and all(float(r["contour"]) == 0.0 and float(r["dist"]) == 0.0 for r in rows)
        assert (out / "model.ckpt").is_file()
        assert (out / "resolved_config.yaml").is_file()

    def test_both_arm_columns_active(self, tmp_path, tiny_config, dataset):
        out = tmp_path / "run"
        runner.invoke(app, ["train", "--config", str(tiny_config), "--dataset", str(dataset),
                            "--out", str(out), "--arm", "both"])
        rows = self.read_log(out / "epochs.csv")
        assert all(float(r["contour"]) != 0.0 and float(r["dist"]) != 0.0 for r in rows)

    def test_missing_dataset_exit_code(self, tmp_path, tiny_config):
        result = runner.invoke(app, ["train", "--config", str(tiny_config), "--dataset", str(tmp_path / "none"),
                                     "--out", str(tmp_path / "run")])
        assert result.exit_code == 3

    def test_divergence_exit_code(self, tmp_path, tiny_config, dataset):
        from shapeprior.core.errors import TrainingFailureError

        with patch("shapeprior.cli.train", side_effect=TrainingFailureError("diverged", 2, "baseline")):
            result = runner.invoke(app, ["train", "--config", str(tiny_config), "--dataset", str(dataset),
                                         "--out", str(tmp_path / "run")])
        assert result.exit_code == 5

    def test_eval_with_dump_targets(self, tmp_path, tiny_config, dataset):
        out = tmp_path / "run"
        runner.invoke(app, ["train", "--config", str(tiny_config), "--dataset", str(dataset), "--out", str(out)])
        result = runner.invoke(app, ["eval", str(out / "model.ckpt"), "--config", str(tiny_config),
                                     "--dataset", str(dataset), "--dump-targets"])
        assert result.exit_code == 0, result.output
        eval_dir = out / "eval_test"
        assert (eval_dir / "eval.csv").is_file()
        assert (eval_dir / "predictions" / "0000.dst").is_file()
        assert (eval_dir / "predictions" / "0001.ctr").is_file()

    def test_eval_ignores_unrelated_net_section(self, tmp_path, tiny_config, dataset):
        out = tmp_path / "run"
        runner.invoke(app, ["train", "--config", str(tiny_config), "--dataset", str(dataset), "--out", str(out)])
        mismatched = tmp_path / "mismatched.yaml"
        mismatched.write_text(yaml.safe_dump(dict(TINY_CONFIG, net=dict(TINY_CONFIG["net"], num_classes=5))))
        result = runner.invoke(app, ["eval", str(out / "model.ckpt"), "--config", str(mismatched),
                                     "--dataset", str(dataset)])
        assert result.exit_code == 0, result.output

    def test_corrupt_checkpoint_exit_code(self, tmp_path, tiny_config, dataset):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"SPCKPT 1\nnot: a checkpoint\n...\n")
        result = runner.invoke(app, ["eval", str(path), "--config", str(tiny_config), "--dataset", str(dataset)])
        assert result.exit_code == 4

    def test_incompatible_checkpoint_exit_code(self, tmp_path, tiny_config, dataset):
        out = tmp_path / "run"
        runner.invoke(app, ["train", "--config", str(tiny_config), "--dataset", str(dataset), "--out", str(out)])

        organs = TINY_CONFIG["phantom"]["organs"] + [
            {"name": "mid", "min_area": 8, "max_area": 16, "intensity_low": 0.3, "intensity_high": 0.4},
        ]
        wider = dict(TINY_CONFIG, phantom=dict(TINY_CONFIG["phantom"], organs=organs),
                     net=dict(TINY_CONFIG["net"], num_classes=4))
        wide_path = tmp_path / "wide.yaml"
        wide_path.write_text(yaml.safe_dump(wider))
        runner.invoke(app, ["gen", "--config", str(wide_path), "--out", str(tmp_path / "wide")])

        result = runner.invoke(app, ["eval", str(out / "model.ckpt"), "--config", str(tiny_config),
                                     "--dataset", str(tmp_path / "wide")])
        assert result.exit_code == 4


class TestAblate:
    """Four-arm runs"""

    def test_outputs(self, tmp_path, tiny_config, dataset):
        out = tmp_path / "ablation"
        result = runner.invoke(app, ["ablate", "--config", str(tiny_config), "--dataset", str(dataset),
                                     "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert sorted(p.name for p in out.glob("*.svg")) == ["boxplot_big.svg", "boxplot_dot.svg"]
        for arm in ("baseline", "dist", "contour", "both"):
            assert (out / arm / "model.ckpt").is_file()
            assert (out / arm / "epochs.csv").is_file()
        assert (out / "summary.txt").read_text().startswith("Model | Dice\n")

    def test_single_thread_reproducible(self, tmp_path, tiny_config, dataset):
        for name in ("a", "b"):
            runner.invoke(app, ["ablate", "--config", str(tiny_config), "--dataset", str(dataset),
                                "--out", str(tmp_path / name), "--threads", "1"])
        for name in ("eval.csv", "both/epochs.csv", "both/model.ckpt", "baseline/model.ckpt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_missing_dataset(self, tmp_path, tiny_config):
        result = runner.invoke(app, ["ablate", "--config", str(tiny_config), "--dataset", str(tmp_path / "none")])
        assert result.exit_code == 3
