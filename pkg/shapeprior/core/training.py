"""Mini-batch Adam training with step-decayed learning rate and early stopping"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .autodiff import Parameter, Tape, backward
from .dataset import DatasetSplit
from .errors import CompatibilityError, ConfigError, InvalidShapeError, NumericalFailureError, TrainingFailureError
from .losses import Arm, BatchTargets, LossBreakdown, compute_losses
from .network import MultiHeadUNet, NetConfig, build, forward
from .targets import one_hot

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.001
    batch_size: int = 4
    decay_factor: float = 0.5
    decay_interval: int = 20
    max_epochs: int = 80
    patience: int = 10
    min_delta: float = 1e-5
    arm: Arm = Arm.BASELINE
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be > 0, got {self.lr0}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"decay_factor must lie in (0, 1], got {self.decay_factor}")
        if self.decay_interval < 1:
            raise ConfigError(f"decay_interval must be >= 1, got {self.decay_interval}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        return self

    def to_dict(self) -> Dict[str, object]:
        data = asdict(self)
        data["arm"] = self.arm.value
        return data


# --- Adam -----------------------------------------------------------------

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment estimates per parameter and the step counter"""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def fresh(cls, params: Sequence[Parameter]) -> "AdamState":
        return cls(
            m={p.name: np.zeros_like(p.data) for p in params},
            v={p.name: np.zeros_like(p.data) for p in params},
        )


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray], state: AdamState, lr: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> AdamState:
    """
    One bias-corrected Adam update, applied to the parameters in place

    Args:
        params: Parameters to update
        grads: Gradients aligned with params
        state: Moment estimates (updated in place)
        lr: Learning rate, > 0

    Returns:
        The updated state
    """
    if lr <= 0:
        raise ConfigError(f"Learning rate must be > 0, got {lr}")
    if len(params) != len(grads):
        raise InvalidShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise InvalidShapeError(f"Gradient of {p.name} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalFailureError(f"Non-finite gradient for parameter {p.name}")

    state.t += 1
    bias1 = 1.0 - beta1 ** state.t
    bias2 = 1.0 - beta2 ** state.t
    for p, g in zip(params, grads):
        m = state.m.get(p.name, np.zeros_like(p.data))
        v = state.v.get(p.name, np.zeros_like(p.data))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[p.name], state.v[p.name] = m, v
        p.data = p.data - lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
    return state


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """lr0 * decay_factor ** floor(epoch / decay_interval)"""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return config.lr0 * config.decay_factor ** (epoch // config.decay_interval)


class EarlyStopping:
    """Stop once the monitored value has not improved by min_delta for `patience` epochs"""

    def __init__(self, patience: int, min_delta: float = 1e-5):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = -1

    def update(self, epoch: int, value: float) -> bool:
        """Record an epoch's value; True if it is a new best"""
        if self.best_epoch < 0 or value < self.best - self.min_delta:
            self.best = value
            self.best_epoch = epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return epoch - self.best_epoch >= self.patience


# --- training -------------------------------------------------------------

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    seg: float
    contour: float
    dist: float
    total: float
    split: str


@dataclass
class TrainingArrays:
    """A split as dense arrays ready for batching"""

    images: np.ndarray
    targets: BatchTargets

    @classmethod
    def from_split(cls, split: DatasetSplit) -> "TrainingArrays":
        return cls(
            images=split.images(),
            targets=BatchTargets(
                seg=one_hot(split.labels(), split.num_classes),
                contour=one_hot(split.contours(), 2),
                dist=split.distances(),
            ),
        )

    def __len__(self) -> int:
        return len(self.images)

    def batch(self, index: np.ndarray):
        return self.images[index], BatchTargets(
            seg=self.targets.seg[index],
            contour=self.targets.contour[index],
            dist=self.targets.dist[index],
        )


@dataclass
class TrainResult:
    model: MultiHeadUNet
    log: List[EpochRecord]
    best_epoch: int
    best_val_loss: float
    stopped_epoch: int
    arm: Arm


def _accumulate(sums: np.ndarray, breakdown: LossBreakdown, weight: int):
    sums += weight * np.array([breakdown.seg, breakdown.contour, breakdown.dist, breakdown.total])


def _record(epoch: int, split: str, sums: np.ndarray, count: int) -> EpochRecord:
    seg, contour, dist, total = (sums / count).tolist()
    return EpochRecord(epoch=epoch, seg=seg, contour=contour, dist=dist, total=total, split=split)


def evaluate_loss(model: MultiHeadUNet, data: TrainingArrays, arm: Arm, batch_size: int = 4) -> LossBreakdown:
    """Sample-weighted mean of the arm's loss terms, without a tape"""
    sums = np.zeros(4)
    for start in range(0, len(data), batch_size):
        index = np.arange(start, min(start + batch_size, len(data)))
        images, targets = data.batch(index)
        _, breakdown = compute_losses(forward(model, images), targets, arm)
        _accumulate(sums, breakdown, len(index))
    seg, contour, dist, total = (sums / len(data)).tolist()
    return LossBreakdown(seg=seg, contour=contour, dist=dist, total=total)


def check_compatible(split: DatasetSplit, net_config: NetConfig):
    """Raise CompatibilityError if the split cannot feed the network"""
    if split.num_classes != net_config.num_classes:
        raise CompatibilityError(
            f"Split '{split.name}' has {split.num_classes} classes, network expects {net_config.num_classes}"
        )
    factor = 2 ** net_config.depth
    h, w = split.extents
    if h % factor or w % factor:
        raise CompatibilityError(f"Split extents {h} x {w} are not divisible by {factor} (depth {net_config.depth})")


def train(train_split: DatasetSplit, val_split: DatasetSplit, net_config: NetConfig, config: TrainConfig,
          on_epoch: Optional[Callable[[EpochRecord, EpochRecord, float], None]] = None) -> TrainResult:
    """
    Train one ablation arm

    Mini-batches are drawn from a seeded permutation per epoch; the model is
    initialized from the same seed, so arms sharing a seed see identical
    initial weights and data order.

    Args:
        train_split: Training samples (possibly with noisy labels)
        val_split: Validation samples used for early stopping
        net_config: Architecture
        config: Optimization settings and the arm
        on_epoch: Called with (train record, validation record, lr) after each epoch

    Returns:
        TrainResult holding the best-validation model and the epoch log
    """
    config.validate()
    net_config.validate()
    for split in (train_split, val_split):
        check_compatible(split, net_config)

    arm = Arm(config.arm)
    model = build(net_config, config.seed)
    state = AdamState.fresh(model.parameters)
    shuffle = np.random.default_rng([config.seed, 1])
    train_data = TrainingArrays.from_split(train_split)
    val_data = TrainingArrays.from_split(val_split)

    stopper = EarlyStopping(config.patience, config.min_delta)
    best_weights = model.snapshot()
    log: List[EpochRecord] = []
    epoch = 0

    for epoch in range(config.max_epochs):
        lr = lr_schedule(epoch, config)
        order = shuffle.permutation(len(train_data))
        sums = np.zeros(4)
        for start in range(0, len(order), config.batch_size):
            index = order[start:start + config.batch_size]
            images, targets = train_data.batch(index)
            model.zero_grad()
            tape = Tape()
            total, breakdown = compute_losses(forward(model, images, tape), targets, arm, tape)
            if not np.isfinite(breakdown.total):
                raise TrainingFailureError("Training loss is not finite", epoch, arm.value)
            backward(tape, total)
            try:
                adam_step(model.parameters, [p.grad for p in model.parameters], state, lr)
            except NumericalFailureError as e:
                raise TrainingFailureError(str(e), epoch, arm.value) from e
            _accumulate(sums, breakdown, len(index))

        train_record = _record(epoch, "train", sums, len(train_data))
        val = evaluate_loss(model, val_data, arm, config.batch_size)
        if not np.isfinite(val.total):
            raise TrainingFailureError("Validation loss is not finite", epoch, arm.value)
        val_record = EpochRecord(epoch=epoch, seg=val.seg, contour=val.contour, dist=val.dist,
                                 total=val.total, split="val")
        log.extend([train_record, val_record])

        if stopper.update(epoch, val.total):
            best_weights = model.snapshot()
        logger.debug("[%s] epoch %d lr=%.2e train=%.5f val=%.5f", arm.value, epoch, lr,
                     train_record.total, val.total)
        if on_epoch is not None:
            on_epoch(train_record, val_record, lr)
        if stopper.should_stop(epoch):
            logger.info("[%s] early stop at epoch %d (best epoch %d)", arm.value, epoch, stopper.best_epoch)
            break

    model.restore(best_weights)
    return TrainResult(model=model, log=log, best_epoch=stopper.best_epoch, best_val_loss=float(stopper.best),
                       stopped_epoch=epoch, arm=arm)
