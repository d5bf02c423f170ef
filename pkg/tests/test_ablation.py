"""Tests for the four-arm ablation and its reports"""

import csv
import io
from unittest.mock import patch

import pytest

from shapeprior.core.ablation import ARMS, run_ablation
from shapeprior.core.dataset import DataConfig, build_splits
from shapeprior.core.errors import InvalidInputError, TrainingFailureError
from shapeprior.core.evaluation import EvalReport
from shapeprior.core.reports import (
    box_plot_svg,
    epoch_csv,
    eval_csv,
    format_p,
    summary_text,
    write_report,
)
from shapeprior.core.network import NetConfig
from shapeprior.core.phantoms import PhantomConfig
from shapeprior.core.training import EpochRecord, TrainConfig, train
from tests.conftest import tiny_net_config, tiny_train_config


def sample_report() -> EvalReport:
    report = EvalReport(organs={1: "big", 2: "dot"}, reference="baseline")
    report.dice["baseline"] = {1: [0.80, 0.82, 0.85, 0.90, 0.70], 2: [0.40, None, 0.50, 0.45, 0.30]}
    report.dice["both"] = {1: [0.85, 0.86, 0.88, 0.91, 0.75], 2: [0.50, 0.60, 0.55, 0.50, 0.42]}
    return report


class TestRunAblation:
    """Arms share seed and data; the report pairs them by test case"""

    def test_four_arms_by_organ(self, tiny_splits):
        result = run_ablation(tiny_splits, tiny_net_config(), tiny_train_config(max_epochs=1),
                              organ_names=["big", "dot"])
        report = result.report
        assert report.arms == [arm.value for arm in ARMS]
        assert report.organs == {1: "big", 2: "dot"}
        for arm in report.arms:
            assert sorted(report.dice[arm]) == [1, 2]
            assert all(len(scores) == len(tiny_splits["test"]) for scores in report.dice[arm].values())
            assert all(s is None or 0.0 <= s <= 1.0 for scores in report.dice[arm].values() for s in scores)

    def test_threads_match_sequential(self, tiny_splits):
        sequential = run_ablation(tiny_splits, tiny_net_config(), tiny_train_config(max_epochs=1))
        threaded = run_ablation(tiny_splits, tiny_net_config(), tiny_train_config(max_epochs=1), threads=4)
        assert sequential.report.dice == threaded.report.dice
        for arm in sequential.results:
            assert sequential.results[arm].log == threaded.results[arm].log

    def test_failed_arm_is_recorded(self, tiny_splits):
        def flaky(train_split, val_split, net_config, config, on_epoch=None):
            if config.arm.value == "contour":
                raise TrainingFailureError("Training loss is not finite", 0, "contour")
            return train(train_split, val_split, net_config, config, on_epoch=on_epoch)

        with patch("shapeprior.core.ablation.train", side_effect=flaky):
            result = run_ablation(tiny_splits, tiny_net_config(), tiny_train_config(max_epochs=1))
        assert "contour" in result.report.failed
        assert result.report.arms == ["baseline", "dist", "both"]

    def test_missing_split(self, tiny_splits):
        with pytest.raises(InvalidInputError):
            run_ablation({"train": tiny_splits["train"]}, tiny_net_config(), tiny_train_config())


class TestReports:
    """CSV, summary and plots"""

    def test_epoch_csv(self):
        log = [EpochRecord(0, 0.5, 0.0, 0.0, 0.5, "train"), EpochRecord(0, 0.25, 0.0, 0.0, 0.25, "val")]
        text = epoch_csv(log)
        assert text.splitlines()[0] == "epoch,seg,contour,dist,total,split"
        assert text.splitlines()[2] == "0,0.25,0.0,0.0,0.25,val"
        assert "\r" not in text

    def test_eval_csv_rows(self):
        rows = list(csv.DictReader(io.StringIO(eval_csv(sample_report()))))
        assert len(rows) == 20
        assert rows[6] == {"arm": "baseline", "organ": "dot", "case": "1", "dice": ""}

    def test_summary_layout(self):
        text = summary_text(sample_report())
        lines = text.splitlines()
        assert lines[0] == "Model | Dice"
        assert lines[1].startswith("U-Net | 0.")
        assert " ± " in lines[1]
        assert lines[2].startswith("U-Net + distance,contour | ")

    def test_significance_marker(self):
        assert format_p(0.0004) == "< 0.001"
        assert format_p(0.0625) == "0.0625"

    def test_failed_arm_in_summary(self):
        report = sample_report()
        report.failed["dist"] = "[dist] Training loss is not finite (epoch 3)"
        assert "U-Net + distance | FAILED" in summary_text(report)

    def test_box_plot_is_deterministic_svg(self):
        first = box_plot_svg(sample_report(), 2)
        second = box_plot_svg(sample_report(), 2)
        assert first == second
        assert b"<svg" in first
        assert b"p=" in first

    def test_write_report_files(self, tmp_path):
        written = write_report(sample_report(), tmp_path)
        names = sorted(p.name for p in written)
        assert names == ["boxplot_big.svg", "boxplot_dot.svg", "eval.csv", "summary.txt"]
        assert all(p.is_file() for p in written)


@pytest.mark.slow
class TestDeskScaleAblation:
    """Default 200/50/50 phantoms, default network and schedule"""

    def test_combined_arm_does_not_regress(self, tmp_path):
        phantom = PhantomConfig()
        splits = build_splits(0, DataConfig(), phantom)
        result = run_ablation(splits, NetConfig(), TrainConfig(seed=0), threads=4,
                              organ_names=phantom.organ_names)
        report = result.report
        assert not report.failed

        baseline = report.global_aggregate("baseline").mean
        assert baseline >= 0.80
        assert report.global_aggregate("both").mean >= baseline - 0.005

        for arm in ("dist", "contour", "both"):
            test = report.global_test(arm)
            assert test is not None and 0.0 < test.p_value <= 1.0
            assert all(report.organ_test(arm, organ) is not None for organ in report.organs)

        written = write_report(report, tmp_path)
        svgs = sorted(p.name for p in written if p.suffix == ".svg")
        assert svgs == sorted(f"boxplot_{name}.svg" for name in phantom.organ_names)
        assert "p=" in (tmp_path / "summary.txt").read_text()
