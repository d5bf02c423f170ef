"""CSV logs, the ablation summary and per-organ box plots"""

import csv
import io
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import InvalidInputError  # noqa: E402
from .evaluation import EvalReport, WilcoxonResult  # noqa: E402
from .losses import Arm  # noqa: E402
from .storage import atomic_write_bytes, atomic_write_text  # noqa: E402
from .training import EpochRecord  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SIGNIFICANCE = 0.001
EPOCH_COLUMNS = ["epoch", "seg", "contour", "dist", "total", "split"]
EVAL_COLUMNS = ["arm", "organ", "case", "dice"]


def _csv_text(columns: Sequence[str], rows: Iterable[Dict[str, object]]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buffer.getvalue()


def arm_label(arm: str) -> str:
    try:
        return Arm(arm).label
    except ValueError:
        return arm


def format_p(p: float) -> str:
    return "< 0.001" if p < SIGNIFICANCE else f"{p:.4f}"


def epoch_csv(log: Sequence[EpochRecord]) -> str:
    """One row per (epoch, split) with every loss term; disabled terms are 0"""
    return _csv_text(EPOCH_COLUMNS, (
        {"epoch": r.epoch, "seg": repr(r.seg), "contour": repr(r.contour), "dist": repr(r.dist),
         "total": repr(r.total), "split": r.split}
        for r in log
    ))


def eval_csv(report: EvalReport) -> str:
    """One row per (arm, organ, case); excluded cases leave dice empty"""
    rows = []
    for arm in report.arms:
        for organ, scores in sorted(report.dice[arm].items()):
            for case, score in enumerate(scores):
                rows.append({"arm": arm, "organ": report.organs[organ], "case": case,
                             "dice": "" if score is None else repr(score)})
    return _csv_text(EVAL_COLUMNS, rows)


def _test_cell(result: Optional[WilcoxonResult]) -> str:
    if result is None:
        return "-"
    mark = " *" if result.p_value < SIGNIFICANCE else ""
    flag = " (degenerate)" if result.degenerate else ""
    return f"W={result.statistic:g} p={format_p(result.p_value)}{mark}{flag}"


def summary_text(report: EvalReport) -> str:
    """
    Plain-text summary: the four-arm "Model | Dice" table, per-organ dice,
    and Wilcoxon tests against the reference arm (`*` marks p < 0.001)
    """
    lines = ["Model | Dice"]
    for arm in report.arms:
        agg = report.global_aggregate(arm)
        lines.append(f"{arm_label(arm)} | {agg.format() if agg else 'n/a'}")
    for arm, error in report.failed.items():
        lines.append(f"{arm_label(arm)} | FAILED: {error}")

    lines += ["", "Per-organ dice"]
    for organ, name in report.organs.items():
        lines.append(f"[{name}]")
        for arm in report.arms:
            agg = report.organ_aggregate(arm, organ)
            lines.append(f"  {arm_label(arm)} | {agg.format() if agg else 'n/a'}")

    lines += ["", f"Wilcoxon signed-rank vs {arm_label(report.reference)} (* p < {SIGNIFICANCE})"]
    for arm in report.arms:
        if arm == report.reference:
            continue
        lines.append(f"{arm_label(arm)} | global | {_test_cell(report.global_test(arm))}")
        for organ, name in report.organs.items():
            lines.append(f"{arm_label(arm)} | {name} | {_test_cell(report.organ_test(arm, organ))}")
    return "\n".join(lines) + "\n"


def box_plot_svg(report: EvalReport, organ: int) -> bytes:
    """
    Box plot of one organ's dice per arm (whiskers at 1.5 IQR), each
    non-reference box annotated with its p-value, significant ones in red
    """
    if organ not in report.organs:
        raise InvalidInputError(f"Unknown organ class {organ}")
    arms = [a for a in report.arms if any(s is not None for s in report.dice[a][organ])]

    with plt.rc_context({"svg.hashsalt": "shapeprior", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        try:
            data = [[s for s in report.dice[a][organ] if s is not None] for a in arms]
            if data:
                ax.boxplot(data, whis=1.5)
                ax.set_xticks(range(1, len(arms) + 1))
                ax.set_xticklabels([arm_label(a) for a in arms], rotation=15, fontsize=8)
            for position, arm in enumerate(arms, start=1):
                test = report.organ_test(arm, organ)
                if test is None:
                    continue
                color = "red" if test.p_value < SIGNIFICANCE else "black"
                ax.annotate(f"p={format_p(test.p_value)}", xy=(position, 1.02), xycoords=("data", "axes fraction"),
                            ha="center", fontsize=8, color=color)
            ax.set_ylabel("Dice")
            ax.set_title(report.organs[organ], pad=16)
            fig.tight_layout()
            buffer = io.BytesIO()
            fig.savefig(buffer, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return buffer.getvalue()


def write_epoch_log(path: PathLike, log: Sequence[EpochRecord]) -> Path:
    path = Path(path)
    atomic_write_text(path, epoch_csv(log))
    return path


def write_report(report: EvalReport, out_dir: PathLike, plots: bool = True) -> List[Path]:
    """
    Write eval.csv, summary.txt and (optionally) boxplot_<organ>.svg files

    Returns:
        Paths written
    """
    out = Path(out_dir)
    written = [out / "eval.csv", out / "summary.txt"]
    atomic_write_text(written[0], eval_csv(report))
    atomic_write_text(written[1], summary_text(report))
    if plots:
        for organ, name in report.organs.items():
            path = out / f"boxplot_{name.replace(' ', '_')}.svg"
            atomic_write_bytes(path, box_plot_svg(report, organ))
            written.append(path)
    logger.debug("Report written to %s (%d files)", out, len(written))
    return written
