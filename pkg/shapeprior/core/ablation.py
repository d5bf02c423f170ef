"""Four-arm ablation: same data, same seed, different auxiliary losses"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

from .dataset import DatasetSplit
from .errors import InvalidInputError, NumericalFailureError
from .evaluation import EvalReport, evaluate_model
from .losses import Arm
from .network import NetConfig
from .training import EpochRecord, TrainConfig, TrainResult, train

logger = logging.getLogger(__name__)

ARMS = (Arm.BASELINE, Arm.DIST, Arm.CONTOUR, Arm.BOTH)

EpochCallback = Callable[[Arm, EpochRecord, EpochRecord, float], None]


@dataclass
class AblationResult:
    report: EvalReport
    results: Dict[str, TrainResult] = field(default_factory=dict)


def _run_arm(arm: Arm, splits: Dict[str, DatasetSplit], net_config: NetConfig, base_config: TrainConfig,
             on_epoch: Optional[EpochCallback]) -> TrainResult:
    callback = None
    if on_epoch is not None:
        def callback(train_record, val_record, lr):
            on_epoch(arm, train_record, val_record, lr)

    logger.info("[%s] training started", arm.value)
    result = train(splits["train"], splits["val"], net_config, replace(base_config, arm=arm), on_epoch=callback)
    logger.info("[%s] finished: best epoch %d, val loss %.5f", arm.value, result.best_epoch, result.best_val_loss)
    return result


def run_ablation(splits: Dict[str, DatasetSplit], net_config: NetConfig, base_config: TrainConfig,
                 threads: int = 1, arms: Sequence[Arm] = ARMS, organ_names: Optional[Sequence[str]] = None,
                 on_epoch: Optional[EpochCallback] = None) -> AblationResult:
    """
    Train every arm with the base config's seed and compare them on the test split

    A numerical failure in one arm is recorded in the report and the other
    arms carry on; any other error propagates.

    Args:
        splits: "train", "val" and "test" splits
        net_config: Architecture shared by all arms
        base_config: Training settings; its arm field is overridden per arm
        threads: Arms trained concurrently (1 = sequential, reproducible order)
        arms: Arms to run, baseline first
        organ_names: Names of organ classes 1..L-1 for the report
        on_epoch: Progress callback (arm, train record, val record, lr)

    Returns:
        AblationResult with the test-split EvalReport and each arm's TrainResult
    """
    missing = [name for name in ("train", "val", "test") if name not in splits]
    if missing:
        raise InvalidInputError(f"Ablation needs splits {missing}")
    if threads < 1:
        raise InvalidInputError(f"threads must be >= 1, got {threads}")

    test = splits["test"]
    organs = {k: f"organ {k}" for k in range(1, test.num_classes)}
    if organ_names is not None:
        if len(organ_names) != len(organs):
            raise InvalidInputError(f"{len(organ_names)} organ names for {len(organs)} organ classes")
        organs = dict(zip(organs, organ_names))
    report = EvalReport(organs=organs, reference=Arm.BASELINE.value)
    results: Dict[str, TrainResult] = {}

    def run(arm: Arm):
        try:
            return _run_arm(arm, splits, net_config, base_config, on_epoch), None
        except NumericalFailureError as e:
            logger.error("[%s] failed: %s", arm.value, e)
            return None, str(e)

    if threads == 1:
        outcomes: List = [run(arm) for arm in arms]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, arms))

    # arms are reported in declaration order whatever order they finished in
    for arm, (result, error) in zip(arms, outcomes):
        if result is None:
            report.failed[arm.value] = error
            continue
        results[arm.value] = result
        report.dice[arm.value] = evaluate_model(result.model, test, base_config.batch_size)
    return AblationResult(report=report, results=results)
