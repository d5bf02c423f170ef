"""Display utilities for rich terminal output"""

import logging
from typing import Dict, Optional

from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from .dataset import DatasetSplit
from .evaluation import EvalReport, WilcoxonResult
from .reports import SIGNIFICANCE, arm_label, format_p
from .training import EpochRecord, TrainResult

console = Console()


def setup_logging(verbose: bool = False):
    """Route library logging through rich; DEBUG with --verbose"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=verbose, show_path=verbose)],
        force=True,
    )
    # matplotlib's font manager is chatty at DEBUG
    logging.getLogger("matplotlib").setLevel(logging.WARNING)


class DisplayManager:
    """Manages rich terminal output for Shape Prior"""

    def __init__(self):
        self.console = console

    def show_config(self, yaml_text: str, source: Optional[str] = None):
        """Show the resolved configuration"""
        title = f"Resolved configuration ({source})" if source else "Resolved configuration"
        self.console.print(Panel(yaml_text.rstrip(), title=title, border_style="blue"))

    def show_dataset(self, splits: Dict[str, DatasetSplit], seed: int):
        """Summarize generated or loaded splits"""
        table = Table(title=f"📦 Dataset (seed {seed})", show_header=True, header_style="bold magenta")
        table.add_column("Split", style="cyan")
        table.add_column("Samples", justify="right")
        table.add_column("Extents")
        table.add_column("Classes", justify="right")
        table.add_column("Label noise", justify="right")
        for name, split in splits.items():
            h, w = split.extents
            table.add_row(name, str(len(split)), f"{h} x {w}", str(split.num_classes), f"{split.label_noise:g}")
        self.console.print(table)

    def show_epoch(self, arm: str, train: EpochRecord, val: EpochRecord, lr: float):
        """One progress line per epoch"""
        self.console.print(
            f"[dim]{arm:>8}[/dim] epoch {train.epoch:3d}  lr {lr:.2e}  "
            f"train [green]{train.total:+.5f}[/green]  val [yellow]{val.total:+.5f}[/yellow]"
        )

    def show_training(self, result: TrainResult):
        """Training outcome"""
        content = (
            f"Arm: [bold]{arm_label(result.arm.value)}[/bold]\n"
            f"Best epoch: {result.best_epoch}\n"
            f"Stopped at epoch: {result.stopped_epoch}\n"
            f"Best validation loss: {result.best_val_loss:.5f}"
        )
        self.console.print(Panel(content, title="🏋️ Training", border_style="green"))

    def show_dice(self, report: EvalReport, arm: str):
        """Per-organ dice table of one arm"""
        table = Table(title=f"🎯 Dice ({arm_label(arm)})", show_header=True, header_style="bold magenta")
        table.add_column("Organ", style="cyan")
        table.add_column("Dice (mean ± std)", style="green")
        table.add_column("Cases", justify="right")
        for organ, name in report.organs.items():
            agg = report.organ_aggregate(arm, organ)
            table.add_row(name, agg.format() if agg else "n/a", str(agg.n if agg else 0))
        overall = report.global_aggregate(arm)
        table.add_row("[bold]all[/bold]", overall.format() if overall else "n/a", str(overall.n if overall else 0))
        self.console.print(table)

    def _p_cell(self, result: Optional[WilcoxonResult]) -> Text:
        if result is None:
            return Text("-", style="dim")
        style = "bold red" if result.p_value < SIGNIFICANCE else ""
        return Text(format_p(result.p_value), style=style)

    def show_ablation(self, report: EvalReport):
        """Four-arm table: global dice plus p-values against the reference arm"""
        table = Table(title="📊 Ablation", show_header=True, header_style="bold magenta")
        table.add_column("Model", style="cyan")
        table.add_column("Dice", style="green")
        table.add_column("p (all)")
        for name in report.organs.values():
            table.add_column(f"p ({name})")
        for arm in report.arms:
            agg = report.global_aggregate(arm)
            row = [arm_label(arm), agg.format() if agg else "n/a", self._p_cell(report.global_test(arm))]
            row += [self._p_cell(report.organ_test(arm, organ)) for organ in report.organs]
            table.add_row(*row)
        for arm, error in report.failed.items():
            table.add_row(arm_label(arm), Text("FAILED", style="bold red"), Text(error, style="red"))
        self.console.print(table)

    def show_error(self, message: str, verbose: bool = False, traceback: str = None):
        """Display error message"""
        self.console.print(Text(f"❌ {message}", style="bold red"))
        if verbose and traceback:
            self.console.print("\n[dim]Traceback:[/dim]")
            self.console.print(traceback)

    def show_success(self, message: str):
        """Display success message"""
        self.console.print(Text(f"✅ {message}", style="bold green"))
