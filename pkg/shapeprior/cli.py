"""Command-line interface for Shape Prior"""

import functools
import logging
import traceback
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import typer

from . import __version__
from .core.ablation import run_ablation
from .core.checkpoint import load_checkpoint, save_checkpoint
from .core.config import RunConfig, resolve, write_resolved
from .core.dataset import SPLITS, DatasetSplit, build_splits, read_dataset, read_splits, write_dataset
from .core.display import DisplayManager, setup_logging
from .core.errors import MissingInputError, ShapePriorError
from .core.evaluation import EvalReport, evaluate_model
from .core.losses import Arm
from .core.network import predict
from .core.reports import write_epoch_log, write_report
from .core.storage import write_tensor
from .core.training import check_compatible, train

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.ckpt"
EPOCH_LOG_NAME = "epochs.csv"

app = typer.Typer(
    name="shapeprior",
    help="Shape Prior - distance and contour complementary tasks for multi-organ segmentation",
    add_completion=False,
    no_args_is_help=True
)

display = DisplayManager()


@app.callback(invoke_without_command=True)
def callback(
    version: bool = typer.Option(
        False,
        "--version",
        help="Show version and exit",
        is_eager=True
    )
):
    """Generate phantoms, train the ablation arms and compare them"""
    if version:
        typer.echo(f"Shape Prior version {__version__}")
        raise typer.Exit()


def handle_errors(func):
    """Decorator mapping library errors to messages and exit codes"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        verbose = bool(kwargs.get("verbose"))
        try:
            return func(*args, **kwargs)
        except typer.Exit:
            raise
        except ShapePriorError as e:
            display.show_error(f"{type(e).__name__}: {e}", verbose, traceback.format_exc())
            raise typer.Exit(e.exit_code)
        except KeyboardInterrupt:
            display.show_error("Interrupted")
            raise typer.Exit(130)
        except Exception as e:
            display.show_error(f"Unexpected error: {e}", verbose, traceback.format_exc())
            raise typer.Exit(1)
    return wrapper


def _resolve(config: Optional[Path], seed: Optional[int] = None, threads: Optional[int] = None,
             arm: Optional[Arm] = None, dataset: Optional[Path] = None, out: Optional[Path] = None,
             consistent: bool = True) -> RunConfig:
    overrides = {
        "seed": seed,
        "threads": threads,
        "train": {"arm": arm.value if arm is not None else None},
        "paths": {
            "dataset": str(dataset) if dataset is not None else None,
            "out": str(out) if out is not None else None,
        },
    }
    return resolve(config, overrides, consistent)


def _split_dir(dataset: Path, split: str) -> Path:
    """A split directory, or the named split under a dataset root"""
    return dataset if (dataset / "manifest").is_file() else dataset / split


ConfigOption = typer.Option(None, "--config", "-c", help="YAML config merged over the defaults")
SeedOption = typer.Option(None, "--seed", help="Master seed")
VerboseOption = typer.Option(False, "--verbose", "-v", help="Debug logging and tracebacks")


@app.command(name="config")
@handle_errors
def config_cmd(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    arm: Optional[Arm] = typer.Option(None, "--arm", help="Ablation arm"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Arms trained concurrently"),
    verbose: bool = VerboseOption,
):
    """Print the resolved configuration"""
    setup_logging(verbose)
    run_config = _resolve(config, seed=seed, threads=threads, arm=arm)
    display.show_config(run_config.to_yaml(), str(config) if config else None)


@app.command()
@handle_errors
def gen(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Dataset root (default: paths.dataset)"),
    verbose: bool = VerboseOption,
):
    """
    Generate train/val/test phantoms with their distance and contour targets.

    Examples:
        shapeprior gen --out data
        shapeprior gen --seed 7 --config small.yaml
    """
    setup_logging(verbose)
    run_config = _resolve(config, seed=seed, dataset=out)
    root = Path(run_config.paths.dataset)
    splits = build_splits(run_config.seed, run_config.data, run_config.phantom)
    for name, split in splits.items():
        write_dataset(split, root / name, extra={"phantom": run_config.phantom.to_dict()})
    write_resolved(run_config, root)
    display.show_dataset(splits, run_config.seed)
    total = sum(len(s) for s in splits.values())
    display.show_success(f"Wrote {total} samples (seed {run_config.seed}) to {root}")


@app.command(name="train")
@handle_errors
def train_cmd(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    arm: Optional[Arm] = typer.Option(None, "--arm", help="Ablation arm: baseline, dist, contour or both"),
    dataset: Optional[Path] = typer.Option(None, "--dataset", "-d", help="Dataset root written by gen"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Run directory"),
    verbose: bool = VerboseOption,
):
    """
    Train one ablation arm and write its checkpoint, epoch CSV and config.

    Examples:
        shapeprior train --arm both --dataset data --out runs/both
    """
    setup_logging(verbose)
    run_config = _resolve(config, seed=seed, arm=arm, dataset=dataset, out=out)
    splits = read_splits(run_config.paths.dataset, ("train", "val"))
    display.show_dataset(splits, run_config.seed)

    arm_value = run_config.train.arm.value
    result = train(splits["train"], splits["val"], run_config.net, run_config.train,
                   on_epoch=lambda t, v, lr: display.show_epoch(arm_value, t, v, lr))

    run_dir = Path(run_config.paths.out)
    save_checkpoint(run_dir / CHECKPOINT_NAME, result.model, {
        "arm": arm_value,
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
    })
    write_epoch_log(run_dir / EPOCH_LOG_NAME, result.log)
    write_resolved(run_config, run_dir)
    display.show_training(result)
    display.show_success(f"Run written to {run_dir}")


def _dump_predictions(model, split: DatasetSplit, out: Path, batch_size: int) -> int:
    predictions = predict(model, split.images(), batch_size)
    for sample, prediction in zip(split.samples, predictions):
        stem = f"{sample.index:04d}"
        write_tensor(out / f"{stem}.dst", prediction.dist.data[0], "f8")
        write_tensor(out / f"{stem}.ctr", np.argmax(prediction.contour_logits.data, axis=0).astype(np.uint8), "u1")
    return len(predictions)


@app.command(name="eval")
@handle_errors
def eval_cmd(
    checkpoint: Path = typer.Argument(..., help="Checkpoint written by train or ablate"),
    dataset: Optional[Path] = typer.Option(None, "--dataset", "-d", help="Dataset root or split directory"),
    split: str = typer.Option("test", "--split", help="Split to evaluate when --dataset is a root"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory (default: next to checkpoint)"),
    dump_targets: bool = typer.Option(False, "--dump-targets", help="Write predicted distance/contour maps"),
    config: Optional[Path] = ConfigOption,
    verbose: bool = VerboseOption,
):
    """
    Per-organ dice of a checkpoint on one split.

    Examples:
        shapeprior eval runs/both/model.ckpt --dataset data
        shapeprior eval runs/both/model.ckpt --dataset data --split train --dump-targets
    """
    setup_logging(verbose)
    # the checkpoint carries its own network config
    run_config = _resolve(config, dataset=dataset, consistent=False)
    if not checkpoint.is_file():
        raise MissingInputError(f"Checkpoint not found: {checkpoint}")
    model, metadata = load_checkpoint(checkpoint)
    data = read_dataset(_split_dir(Path(run_config.paths.dataset), split))
    check_compatible(data, model.config)

    arm = str(metadata.get("arm", "model"))
    report = EvalReport(organs={k: f"organ {k}" for k in range(1, data.num_classes)}, reference=arm)
    report.dice[arm] = evaluate_model(model, data, run_config.train.batch_size)

    out_dir = out or checkpoint.parent / f"eval_{data.name}"
    write_report(report, out_dir, plots=False)
    if dump_targets:
        count = _dump_predictions(model, data, out_dir / "predictions", run_config.train.batch_size)
        logger.info("Dumped %d predicted distance/contour maps", count)

    display.show_dice(report, arm)
    overall = report.global_aggregate(arm)
    display.show_success(f"{data.name}: mean dice {overall.format() if overall else 'n/a'} -> {out_dir}")


@app.command()
@handle_errors
def ablate(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    dataset: Optional[Path] = typer.Option(None, "--dataset", "-d", help="Dataset root written by gen"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Run directory"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Arms trained concurrently"),
    verbose: bool = VerboseOption,
):
    """
    Train all four arms, compare them on the test split and plot the results.

    Examples:
        shapeprior ablate --dataset data --out runs/ablation
        shapeprior ablate --dataset data --threads 4
    """
    setup_logging(verbose)
    run_config = _resolve(config, seed=seed, threads=threads, dataset=dataset, out=out)
    root = Path(run_config.paths.dataset)
    if not root.is_dir():
        raise MissingInputError(f"Dataset directory not found: {root}")
    splits: Dict[str, DatasetSplit] = read_splits(root, SPLITS)
    display.show_dataset(splits, run_config.seed)

    organ_names = run_config.phantom.organ_names
    if len(organ_names) != splits["test"].num_classes - 1:
        organ_names = None
    result = run_ablation(
        splits, run_config.net, run_config.train, threads=run_config.threads, organ_names=organ_names,
        on_epoch=lambda arm, t, v, lr: display.show_epoch(arm.value, t, v, lr),
    )

    run_dir = Path(run_config.paths.out)
    for arm, arm_result in result.results.items():
        save_checkpoint(run_dir / arm / CHECKPOINT_NAME, arm_result.model, {
            "arm": arm,
            "best_epoch": arm_result.best_epoch,
            "best_val_loss": arm_result.best_val_loss,
        })
        write_epoch_log(run_dir / arm / EPOCH_LOG_NAME, arm_result.log)
    write_report(result.report, run_dir)
    write_resolved(run_config, run_dir)

    display.show_ablation(result.report)
    if result.report.failed:
        display.show_error(f"{len(result.report.failed)} arm(s) failed; partial report in {run_dir}")
        raise typer.Exit(5)
    display.show_success(f"Ablation report written to {run_dir}")


def cli():
    """Entry point for the CLI"""
    app()


if __name__ == "__main__":
    cli()
