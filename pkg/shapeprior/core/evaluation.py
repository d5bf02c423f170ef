"""Dice scores, mean ± std aggregation and the Wilcoxon signed-rank test"""

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm, rankdata

from .dataset import DatasetSplit
from .errors import InvalidInputError, InvalidShapeError
from .network import MultiHeadUNet, predict, predict_labels
from .targets import LabelMap

# exact null distribution up to this many non-zero differences
EXACT_LIMIT = 12


def dice_score(pred: LabelMap, gt: LabelMap, organ: int) -> Optional[float]:
    """
    2|P ∩ G| / (|P| + |G|) for one class

    Returns None when the class is absent from both maps; such cases are
    excluded from aggregation.
    """
    if pred.labels.shape != gt.labels.shape:
        raise InvalidShapeError(f"Prediction {pred.labels.shape} and ground truth {gt.labels.shape} differ")
    p = pred.labels == organ
    g = gt.labels == organ
    size = int(p.sum()) + int(g.sum())
    if size == 0:
        return None
    return 2.0 * int((p & g).sum()) / size


@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float
    n: int
    std_defined: bool = True

    def format(self) -> str:
        text = f"{self.mean:.4f} ± {self.std:.4f}"
        return text if self.std_defined else f"{text} (n=1)"


def aggregate(scores: Sequence[float]) -> Aggregate:
    """Arithmetic mean and sample standard deviation (n - 1 denominator)"""
    values = np.asarray([s for s in scores], dtype=np.float64)
    if values.size == 0:
        raise InvalidInputError("Cannot aggregate an empty score list")
    if values.size == 1:
        return Aggregate(mean=float(values[0]), std=0.0, n=1, std_defined=False)
    return Aggregate(mean=float(values.mean()), std=float(values.std(ddof=1)), n=int(values.size))


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    exact: bool
    degenerate: bool = False


def _exact_p(ranks: np.ndarray, observed: float) -> float:
    n = ranks.size
    # every sign assignment as a row of 0/1 (1 = positive)
    signs = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
    w_plus = signs @ ranks
    w_min = np.minimum(w_plus, ranks.sum() - w_plus)
    return float(np.count_nonzero(w_min <= observed + 1e-9) / 2 ** n)


def wilcoxon_signed_rank(pairs: Sequence[Tuple[float, float]]) -> WilcoxonResult:
    """
    Two-sided Wilcoxon signed-rank test on paired samples

    Zero differences are dropped; tied magnitudes get mid-ranks. The
    statistic is W = min(W+, W-). With at most 12 non-zero differences the
    p-value comes from all 2^n sign assignments, otherwise from the normal
    approximation with tie-corrected variance and continuity correction.

    Args:
        pairs: (a, b) pairs; differences are a - b

    Returns:
        WilcoxonResult; all-zero differences give p = 1 flagged degenerate
    """
    if len(pairs) == 0:
        raise InvalidInputError("Wilcoxon test needs at least one pair")
    d = np.array([a - b for a, b in pairs], dtype=np.float64)
    d = d[d != 0]
    n = int(d.size)
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, n=0, exact=True, degenerate=True)

    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    statistic = min(w_plus, w_minus)

    if n <= EXACT_LIMIT:
        return WilcoxonResult(statistic=statistic, p_value=_exact_p(ranks, statistic), n=n, exact=True)

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
    z = (statistic - mean + 0.5) / np.sqrt(variance)
    p_value = float(min(1.0, 2.0 * norm.cdf(z)))
    return WilcoxonResult(statistic=statistic, p_value=p_value, n=n, exact=False)


# --- model evaluation -----------------------------------------------------

def evaluate_model(model: MultiHeadUNet, split: DatasetSplit, batch_size: int = 4) -> Dict[int, List[Optional[float]]]:
    """
    Per-organ dice of every case in a split

    Returns:
        organ id -> list aligned with the split's samples (None = excluded)
    """
    predictions = predict(model, split.images(), batch_size)
    scores: Dict[int, List[Optional[float]]] = {k: [] for k in range(1, split.num_classes)}
    for prediction, sample in zip(predictions, split.samples):
        labels = predict_labels(prediction.seg_logits, split.num_classes)
        for organ in scores:
            scores[organ].append(dice_score(labels, sample.labels, organ))
    return scores


def paired_scores(a: Sequence[Optional[float]], b: Sequence[Optional[float]]) -> List[Tuple[float, float]]:
    """Pairs of cases scored in both lists"""
    if len(a) != len(b):
        raise InvalidInputError(f"Paired score lists differ in length ({len(a)} vs {len(b)})")
    return [(x, y) for x, y in zip(a, b) if x is not None and y is not None]


def pooled_scores(per_organ: Dict[int, List[Optional[float]]]) -> List[Optional[float]]:
    """All (organ, case) scores, organ-major, for the global statistics"""
    return list(itertools.chain.from_iterable(per_organ[k] for k in sorted(per_organ)))


@dataclass
class EvalReport:
    """Per-arm dice samples, their aggregates and Wilcoxon tests against a reference arm"""

    organs: Dict[int, str]
    reference: str
    dice: Dict[str, Dict[int, List[Optional[float]]]] = field(default_factory=dict)
    failed: Dict[str, str] = field(default_factory=dict)

    @property
    def arms(self) -> List[str]:
        return list(self.dice)

    def organ_aggregate(self, arm: str, organ: int) -> Optional[Aggregate]:
        scores = [s for s in self.dice[arm][organ] if s is not None]
        return aggregate(scores) if scores else None

    def global_aggregate(self, arm: str) -> Optional[Aggregate]:
        scores = [s for s in pooled_scores(self.dice[arm]) if s is not None]
        return aggregate(scores) if scores else None

    def organ_test(self, arm: str, organ: int) -> Optional[WilcoxonResult]:
        if arm == self.reference or self.reference not in self.dice or arm not in self.dice:
            return None
        pairs = paired_scores(self.dice[arm][organ], self.dice[self.reference][organ])
        return wilcoxon_signed_rank(pairs) if pairs else None

    def global_test(self, arm: str) -> Optional[WilcoxonResult]:
        if arm == self.reference or self.reference not in self.dice or arm not in self.dice:
            return None
        pairs = paired_scores(pooled_scores(self.dice[arm]), pooled_scores(self.dice[self.reference]))
        return wilcoxon_signed_rank(pairs) if pairs else None
