"""Segmentation, contour and distance objectives and their sum

Segmentation and contour losses are cross-entropy minus the soft dice
coefficient; the distance loss is the mean squared error. All terms are
normalized by pixel count, so a perfect segmentation scores -1 and the
three terms stay commensurate under the unweighted sum.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import InvalidInputError, InvalidShapeError

LOG_FLOOR = 1e-7
DICE_SMOOTHING = 1e-7


class Arm(str, Enum):
    """Ablation arms: which auxiliary losses join the segmentation loss"""

    BASELINE = "baseline"
    DIST = "dist"
    CONTOUR = "contour"
    BOTH = "both"

    @property
    def switches(self) -> "LossSwitches":
        return LossSwitches(
            seg=True,
            contour=self in (Arm.CONTOUR, Arm.BOTH),
            dist=self in (Arm.DIST, Arm.BOTH),
        )

    @property
    def label(self) -> str:
        return {
            Arm.BASELINE: "U-Net",
            Arm.DIST: "U-Net + distance",
            Arm.CONTOUR: "U-Net + contour",
            Arm.BOTH: "U-Net + distance,contour",
        }[self]


@dataclass(frozen=True)
class LossSwitches:
    seg: bool = True
    contour: bool = False
    dist: bool = False


@dataclass(frozen=True)
class LossBreakdown:
    """Loss terms as floats; disabled terms are 0"""

    seg: float
    contour: float
    dist: float
    total: float


def _class_axis(p: Tensor) -> int:
    if p.ndim not in (3, 4):
        raise InvalidShapeError(f"Expected L x H x W or N x L x H x W probabilities, got {p.shape}")
    return p.ndim - 3


def _check_pair(p: Tensor, g: np.ndarray):
    if p.shape != g.shape:
        raise InvalidShapeError(f"Prediction shape {p.shape} does not match target shape {g.shape}")


def cross_entropy(p, g: np.ndarray, tape: Optional[Tape] = None) -> Tensor:
    """-(1/N) sum_x sum_l g_l(x) log p_l(x), probabilities floored at 1e-7"""
    p = ad.as_tensor(p)
    g = np.asarray(g, dtype=np.float64)
    _check_pair(p, g)
    pixels = p.size // p.shape[_class_axis(p)]
    log_p = ad.log(ad.clamp_min(p, LOG_FLOOR, tape=tape), tape=tape)
    total = ad.reduce_sum(ad.mul(log_p, g, tape=tape), tape=tape)
    return ad.div(total, -float(pixels), tape=tape)


def soft_dice(p, g: np.ndarray, tape: Optional[Tape] = None) -> Tensor:
    """Per-class (2 sum pg + eps) / (sum p^2 + sum g^2 + eps), averaged over classes"""
    p = ad.as_tensor(p)
    g = np.asarray(g, dtype=np.float64)
    _check_pair(p, g)
    class_axis = _class_axis(p)
    spatial = tuple(ax for ax in range(p.ndim) if ax != class_axis)

    overlap = ad.reduce_sum(ad.mul(p, g, tape=tape), axis=spatial, tape=tape)
    p_energy = ad.reduce_sum(ad.square(p, tape=tape), axis=spatial, tape=tape)
    g_energy = (g * g).sum(axis=spatial)

    numerator = ad.add(ad.mul(overlap, 2.0, tape=tape), DICE_SMOOTHING, tape=tape)
    denominator = ad.add(ad.add(p_energy, g_energy, tape=tape), DICE_SMOOTHING, tape=tape)
    return ad.mean(ad.div(numerator, denominator, tape=tape), tape=tape)


def _overlap_loss(p, g, expected_classes: Optional[int], what: str, tape: Optional[Tape]) -> Tensor:
    p = ad.as_tensor(p)
    classes = p.shape[_class_axis(p)]
    if classes < 2 or (expected_classes is not None and classes != expected_classes):
        raise InvalidInputError(f"{what} expects {expected_classes or '>= 2'} classes, got {classes}")
    return ad.sub(cross_entropy(p, g, tape=tape), soft_dice(p, g, tape=tape), tape=tape)


def seg_loss(p, g: np.ndarray, num_classes: Optional[int] = None, tape: Optional[Tape] = None) -> Tensor:
    """Cross-entropy minus soft dice over organs + background"""
    return _overlap_loss(p, g, num_classes, "seg_loss", tape)


def contour_loss(p, g: np.ndarray, tape: Optional[Tape] = None) -> Tensor:
    """Cross-entropy minus soft dice over the two contour classes"""
    return _overlap_loss(p, g, 2, "contour_loss", tape)


def dist_loss(pred, target: np.ndarray, tape: Optional[Tape] = None) -> Tensor:
    """(1/n) sum_x (g(x) - p(x))^2"""
    pred = ad.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InvalidShapeError(f"Distance prediction {pred.shape} does not match target {target.shape}")
    return ad.mean(ad.square(ad.sub(pred, target, tape=tape), tape=tape), tape=tape)


def total_loss(seg: Tensor, contour: Optional[Tensor], dist: Optional[Tensor], switches: LossSwitches,
               tape: Optional[Tape] = None) -> Tuple[Tensor, LossBreakdown]:
    """
    Sum the enabled loss terms with unit weights

    Args:
        seg: Segmentation loss (always enabled)
        contour: Contour loss, ignored when switched off
        dist: Distance loss, ignored when switched off
        switches: Enabled terms
        tape: Tape to record the sum on

    Returns:
        (total tensor, LossBreakdown with disabled terms as 0)
    """
    if not switches.seg:
        raise InvalidInputError("Every arm trains segmentation; seg cannot be disabled")
    total = seg
    contour_value = dist_value = 0.0
    if switches.contour:
        if contour is None:
            raise InvalidInputError("Contour term enabled but not provided")
        total = ad.add(total, contour, tape=tape)
        contour_value = contour.item()
    if switches.dist:
        if dist is None:
            raise InvalidInputError("Distance term enabled but not provided")
        total = ad.add(total, dist, tape=tape)
        dist_value = dist.item()
    return total, LossBreakdown(seg=seg.item(), contour=contour_value, dist=dist_value, total=total.item())


@dataclass
class BatchTargets:
    """One-hot and regression targets for a mini-batch"""

    seg: np.ndarray      # N x L x H x W
    contour: np.ndarray  # N x 2 x H x W
    dist: np.ndarray     # N x 1 x H x W


def compute_losses(prediction, targets: BatchTargets, arm: Arm,
                   tape: Optional[Tape] = None) -> Tuple[Tensor, LossBreakdown]:
    """Loss terms of one arm for a batch Prediction"""
    switches = arm.switches
    seg_probs = ad.softmax_channel(prediction.seg_logits, tape=tape)
    seg = seg_loss(seg_probs, targets.seg, num_classes=targets.seg.shape[1], tape=tape)
    contour = dist = None
    if switches.contour:
        contour = contour_loss(ad.softmax_channel(prediction.contour_logits, tape=tape), targets.contour, tape=tape)
    if switches.dist:
        dist = dist_loss(prediction.dist, targets.dist, tape=tape)
    return total_loss(seg, contour, dist, switches, tape=tape)
