"""Synthetic multi-organ phantoms

Each phantom is a noisy background with non-overlapping rotated filled
ellipses, one per organ class, each with its own mean intensity. A
seed (or a seed sequence such as ``[seed, split, index]``) fully determines
the output, so samples can be generated independently and in any order.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InvalidInputError
from .targets import LabelMap

logger = logging.getLogger(__name__)

Seed = Union[int, Sequence[int]]


@dataclass(frozen=True)
class OrganSpec:
    """Shape family (ellipse), pixel-count range and intensity range of one class"""

    name: str
    min_area: int
    max_area: int
    intensity_low: float
    intensity_high: float
    min_aspect: float = 0.5

    def validate(self):
        if self.min_area < 1 or self.min_area > self.max_area:
            raise ConfigError(
                f"Organ '{self.name}': size range [{self.min_area}, {self.max_area}] is invalid"
            )
        if not 0.0 <= self.intensity_low <= self.intensity_high <= 1.0:
            raise ConfigError(
                f"Organ '{self.name}': intensity range [{self.intensity_low}, {self.intensity_high}] "
                "must lie within [0, 1]"
            )
        if not 0.0 < self.min_aspect <= 1.0:
            raise ConfigError(f"Organ '{self.name}': min_aspect must lie in (0, 1]")


def default_organs() -> List[OrganSpec]:
    """Four organ classes from large to deliberately small"""
    return [
        OrganSpec("large", 350, 600, 0.55, 0.65),
        OrganSpec("medium", 150, 300, 0.72, 0.82),
        OrganSpec("elongated", 80, 160, 0.38, 0.48, min_aspect=0.3),
        OrganSpec("small", 12, 40, 0.88, 0.96),
    ]


@dataclass(frozen=True)
class PhantomConfig:
    height: int = 64
    width: int = 64
    organs: Tuple[OrganSpec, ...] = field(default_factory=lambda: tuple(default_organs()))
    background_intensity: float = 0.2
    noise_std: float = 0.05
    placement_retries: int = 200

    @property
    def num_classes(self) -> int:
        return len(self.organs) + 1

    @property
    def organ_names(self) -> List[str]:
        return [o.name for o in self.organs]

    def validate(self) -> "PhantomConfig":
        if self.height < 1 or self.width < 1:
            raise ConfigError(f"Phantom extents must be positive, got {self.height} x {self.width}")
        if not self.organs:
            raise ConfigError("At least one organ class is required")
        for organ in self.organs:
            organ.validate()
        if not 0.0 <= self.background_intensity <= 1.0:
            raise ConfigError("background_intensity must lie within [0, 1]")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if self.placement_retries < 1:
            raise ConfigError("placement_retries must be >= 1")
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["organs"] = [asdict(o) for o in self.organs]
        return data


@dataclass
class Phantom:
    """Image (1 x H x W in [0, 1]) with its label map"""

    image: np.ndarray
    labels: LabelMap
    omitted: Tuple[int, ...] = ()

    @property
    def degraded(self) -> bool:
        """True when some organ could not be placed"""
        return bool(self.omitted)


def _ellipse_mask(height: int, width: int, center: Tuple[float, float], axes: Tuple[float, float],
                  angle: float) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    dy, dx = yy - center[0], xx - center[1]
    cos, sin = np.cos(angle), np.sin(angle)
    u = dx * cos + dy * sin
    v = -dx * sin + dy * cos
    return (u / axes[0]) ** 2 + (v / axes[1]) ** 2 <= 1.0


def _place_organ(rng: np.random.Generator, spec: OrganSpec, occupied: np.ndarray,
                 retries: int) -> Optional[np.ndarray]:
    height, width = occupied.shape
    for _ in range(retries):
        area = rng.uniform(spec.min_area, spec.max_area)
        aspect = rng.uniform(spec.min_aspect, 1.0)
        major = np.sqrt(area / (np.pi * aspect))
        center = (rng.uniform(0, height - 1), rng.uniform(0, width - 1))
        angle = rng.uniform(0.0, np.pi)
        mask = _ellipse_mask(height, width, center, (major, major * aspect), angle)
        count = int(mask.sum())
        if spec.min_area <= count <= spec.max_area and not (mask & occupied).any():
            return mask
    return None


def generate(seed: Seed, config: PhantomConfig) -> Phantom:
    """
    Generate one phantom

    Args:
        seed: Integer seed or seed sequence
        config: Validated phantom configuration

    Returns:
        Phantom; organs that could not be placed are listed in ``omitted``
    """
    rng = np.random.default_rng(seed)
    labels = np.zeros((config.height, config.width), dtype=np.int32)
    means = np.full((config.height, config.width), config.background_intensity)
    omitted = []

    for organ_id, spec in enumerate(config.organs, start=1):
        mask = _place_organ(rng, spec, labels != 0, config.placement_retries)
        if mask is None:
            omitted.append(organ_id)
            logger.debug("Organ %s omitted after %d placement attempts", spec.name, config.placement_retries)
            continue
        labels[mask] = organ_id
        means[mask] = rng.uniform(spec.intensity_low, spec.intensity_high)

    noise = rng.normal(0.0, config.noise_std, size=means.shape) if config.noise_std > 0 else 0.0
    image = np.clip(means + noise, 0.0, 1.0)[None]
    return Phantom(image=image, labels=LabelMap(labels, config.num_classes), omitted=tuple(omitted))


CROSS = ndimage.generate_binary_structure(2, 1)


def corrupt_labels(labels: LabelMap, severity: float, seed: Seed, operation: Optional[str] = None) -> LabelMap:
    """
    Perturb organ outlines the way automatically fused annotations are noisy

    Each organ is either dilated or eroded (4-connected structuring element)
    by round(severity * equivalent radius) steps. Dilation only claims pixels
    that were background in the input, so organs never swap labels.

    Args:
        labels: Clean label map
        severity: Strength in [0, 1]; 0 returns the input unchanged
        seed: Seed of the per-organ operation choice
        operation: Force "dilate" or "erode" for every organ

    Returns:
        Corrupted label map
    """
    if not 0.0 <= severity <= 1.0:
        raise InvalidInputError(f"severity must lie in [0, 1], got {severity}")
    if operation not in (None, "dilate", "erode"):
        raise InvalidInputError(f"Unknown operation: {operation}")

    rng = np.random.default_rng(seed)
    organs = list(range(1, labels.num_classes))
    # drawn up front so every severity sees the same choices for a seed
    choices = rng.choice(["dilate", "erode"], size=len(organs))
    if severity == 0.0:
        return labels

    original = labels.labels
    result = original.copy()
    for organ, choice in zip(organs, choices):
        mask = original == organ
        count = int(mask.sum())
        if count == 0:
            continue
        radius = int(round(severity * np.sqrt(count / np.pi)))
        if radius == 0:
            continue
        if (operation or choice) == "erode":
            kept = ndimage.binary_erosion(mask, structure=CROSS, iterations=radius, border_value=0)
            result[mask & ~kept] = 0
        else:
            allowed = (original == 0) & (result == 0)
            grown = ndimage.binary_dilation(mask, structure=CROSS, iterations=radius, mask=allowed | mask)
            result[grown & allowed] = organ
    return LabelMap(result, labels.num_classes)
