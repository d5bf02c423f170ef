"""Complementary-task targets derived from multi-organ label maps

Two targets are built from a label map:
- a composite distance map: the per-organ Euclidean distance transform,
  normalized by each organ's maximum and summed over the (disjoint) organs
- a contour map: organ pixels with a differently-labelled 4-neighbour

The image is treated as surrounded by a one-pixel ring of background, so
organs touching the border get finite distances and border contours.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class LabelMap:
    """Integer class grid: 0 is background, 1..num_classes-1 are organs"""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.size == 0:
            raise InvalidInputError(f"Label map must be a non-empty 2D grid, got shape {labels.shape}")
        if self.num_classes < 2:
            raise InvalidInputError(f"Label map needs at least 2 classes, got {self.num_classes}")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise InvalidInputError("Label map values must be integers")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise InvalidInputError(f"Label values must lie in [0, {self.num_classes})")
        object.__setattr__(self, "labels", labels.astype(np.int32))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def mask(self, organ: int) -> np.ndarray:
        return self.labels == organ

    def present_organs(self) -> List[int]:
        return [int(k) for k in np.unique(self.labels) if k != 0]


@dataclass(frozen=True)
class DistanceMap:
    """Normalized distance values in [0, 1], zero on background"""

    values: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ContourMap:
    """Binary organ-boundary grid"""

    values: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _lower_envelope_squared(f: np.ndarray) -> np.ndarray:
    """
    1D squared-distance transform by the lower envelope of parabolas

    Computes d[q] = min_p (q - p)^2 + f[p] over sites p with finite f[p].
    Sites with infinite f never enter the envelope.
    """
    n = f.shape[0]
    sites = np.flatnonzero(np.isfinite(f)).tolist()
    f = f.tolist()
    if not sites:
        return np.full(n, np.inf)

    v = [sites[0]]        # parabola vertices in the envelope
    z = [-np.inf, np.inf]  # boundaries between envelope segments
    for q in sites[1:]:
        fq = f[q] + q * q
        while True:
            p = v[-1]
            s = (fq - (f[p] + p * p)) / (2.0 * (q - p))
            if s > z[-2]:
                break
            # z[0] is -inf, so the first vertex is never popped
            v.pop()
            z.pop()
        v.append(q)
        z[-1] = s
        z.append(np.inf)

    d = [0.0] * n
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        d[q] = (q - p) * (q - p) + f[p]
    return np.array(d)


def edt(mask: np.ndarray) -> np.ndarray:
    """
    Exact Euclidean distance transform of a binary mask

    Each foreground pixel gets the distance between its centre and the
    nearest background pixel centre; the grid is surrounded by a virtual
    background ring. Background pixels map to 0.

    Args:
        mask: 2D binary grid (nonzero = foreground)

    Returns:
        Float64 grid of distances with the mask's shape
    """
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.size == 0:
        raise InvalidInputError(f"edt needs a non-empty 2D mask, got shape {mask.shape}")
    fg = mask != 0
    out = np.zeros(fg.shape, dtype=np.float64)
    if not fg.any():
        return out

    # crop to the foreground bounding box plus the one-pixel background ring
    rows = np.flatnonzero(fg.any(axis=1))
    cols = np.flatnonzero(fg.any(axis=0))
    r0, r1 = rows[0], rows[-1] + 1
    c0, c1 = cols[0], cols[-1] + 1
    padded = np.pad(fg[r0:r1, c0:c1], 1, constant_values=False)

    f = np.where(padded, np.inf, 0.0)
    for i in range(f.shape[0]):
        f[i] = _lower_envelope_squared(f[i])
    for j in range(f.shape[1]):
        f[:, j] = _lower_envelope_squared(f[:, j])

    out[r0:r1, c0:c1] = np.sqrt(f[1:-1, 1:-1])
    return out


def _check_organ(labels: LabelMap, organ: int):
    if not 1 <= organ < labels.num_classes:
        raise InvalidInputError(
            f"Organ id must lie in [1, {labels.num_classes}), got {organ}"
        )


def organ_distance_map(labels: LabelMap, organ: int) -> DistanceMap:
    """Distance transform of one organ divided by its maximum over the organ"""
    _check_organ(labels, organ)
    mask = labels.mask(organ)
    if not mask.any():
        return DistanceMap(np.zeros(mask.shape, dtype=np.float64))
    dist = edt(mask)
    return DistanceMap(dist / dist.max())


def composite_distance_map(labels: LabelMap) -> DistanceMap:
    """Pixelwise sum of the normalized per-organ distance maps"""
    total = np.zeros(labels.labels.shape, dtype=np.float64)
    for organ in labels.present_organs():
        total += organ_distance_map(labels, organ).values
    return DistanceMap(total)


def contour_map(labels: LabelMap) -> ContourMap:
    """Organ pixels whose 4-neighbourhood (or the outside ring) differs"""
    grid = labels.labels
    padded = np.pad(grid, 1, constant_values=0)
    centre = padded[1:-1, 1:-1]
    differs = (
        (padded[:-2, 1:-1] != centre)
        | (padded[2:, 1:-1] != centre)
        | (padded[1:-1, :-2] != centre)
        | (padded[1:-1, 2:] != centre)
    )
    return ContourMap(((grid != 0) & differs).astype(np.uint8))


def target_maps(labels: LabelMap) -> Tuple[DistanceMap, ContourMap]:
    """Both complementary-task targets for a label map"""
    return composite_distance_map(labels), contour_map(labels)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """
    One-hot encode a class grid along a new class axis

    A (H, W) grid gives (L, H, W); a (N, H, W) batch gives (N, L, H, W).
    """
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidInputError(f"Class ids must lie in [0, {num_classes})")
    encoded = (labels[..., None] == np.arange(num_classes)).astype(np.float64)
    return np.moveaxis(encoded, -1, -3)
