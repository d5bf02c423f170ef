"""Dataset splits on disk

Layout of one split directory:

    manifest                 YAML: format, version, split, seed, count, files
    samples/<idx>.img        1 x H x W float64 image
    samples/<idx>.lbl        H x W int32 labels
    targets/<idx>.dst        H x W float64 composite distance map
    targets/<idx>.ctr        H x W uint8 contour map

A dataset root holds one directory per split (train, val, test).
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import yaml

from .errors import ConfigError, DatasetFormatError, MissingInputError, VersionMismatchError
from .phantoms import Phantom, PhantomConfig, corrupt_labels, generate
from .storage import atomic_write_text, read_tensor, write_tensor
from .targets import ContourMap, DistanceMap, LabelMap, target_maps

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MANIFEST_NAME = "manifest"
MANIFEST_FORMAT = "shapeprior-dataset"
MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class DataConfig:
    """Split sizes and the label noise applied to the training split"""

    train_count: int = 200
    val_count: int = 50
    test_count: int = 50
    train_label_noise: float = 0.3

    def counts(self) -> Dict[str, int]:
        return {"train": self.train_count, "val": self.val_count, "test": self.test_count}

    def validate(self) -> "DataConfig":
        for split, count in self.counts().items():
            if count < 1:
                raise ConfigError(f"{split} split needs at least one sample, got {count}")
        if not 0.0 <= self.train_label_noise <= 1.0:
            raise ConfigError("train_label_noise must lie in [0, 1]")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class Sample:
    """One stored sample with its complementary-task targets"""

    index: int
    image: np.ndarray
    labels: LabelMap
    distance: DistanceMap
    contour: ContourMap


@dataclass
class DatasetSplit:
    name: str
    seed: int
    num_classes: int
    samples: List[Sample]
    label_noise: float = 0.0

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def extents(self):
        return self.samples[0].labels.labels.shape if self.samples else (0, 0)

    def images(self) -> np.ndarray:
        return np.stack([s.image for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.stack([s.labels.labels for s in self.samples])

    def distances(self) -> np.ndarray:
        return np.stack([s.distance.values for s in self.samples])[:, None]

    def contours(self) -> np.ndarray:
        return np.stack([s.contour.values for s in self.samples])


def make_sample(index: int, image: np.ndarray, labels: LabelMap) -> Sample:
    distance, contour = target_maps(labels)
    return Sample(index=index, image=np.asarray(image, dtype=np.float64), labels=labels,
                  distance=distance, contour=contour)


def build_split(name: str, seed: int, count: int, phantom_config: PhantomConfig,
                label_noise: float = 0.0) -> DatasetSplit:
    """
    Generate a split; sample i of split s uses the stream (seed, s, i)

    Label noise (if any) is applied before targets are derived, so targets
    always agree with the stored labels.
    """
    split_id = SPLITS.index(name) if name in SPLITS else len(SPLITS)
    samples = []
    degraded = 0
    for index in range(count):
        phantom: Phantom = generate([seed, split_id, index], phantom_config)
        degraded += phantom.degraded
        labels = phantom.labels
        if label_noise > 0:
            labels = corrupt_labels(labels, label_noise, [seed, split_id, index, 1])
        samples.append(make_sample(index, phantom.image, labels))
    if degraded:
        logger.warning("%s: %d of %d phantoms have omitted organs", name, degraded, count)
    return DatasetSplit(name=name, seed=seed, num_classes=phantom_config.num_classes,
                        samples=samples, label_noise=label_noise)


def build_splits(seed: int, data_config: DataConfig, phantom_config: PhantomConfig) -> Dict[str, DatasetSplit]:
    """Train (noisy labels), validation and test (clean labels) splits"""
    counts = data_config.counts()
    return {
        name: build_split(name, seed, counts[name], phantom_config,
                          label_noise=data_config.train_label_noise if name == "train" else 0.0)
        for name in SPLITS
    }


def _sample_files(index: int) -> Dict[str, str]:
    stem = f"{index:04d}"
    return {
        "image": f"samples/{stem}.img",
        "labels": f"samples/{stem}.lbl",
        "distance": f"targets/{stem}.dst",
        "contour": f"targets/{stem}.ctr",
    }


def write_dataset(split: DatasetSplit, path: PathLike, extra: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write one split directory: per-sample tensor files, then the manifest

    Args:
        split: Samples with their targets
        path: Split directory (created if missing)
        extra: Additional manifest fields (e.g. the phantom config)

    Returns:
        Path of the manifest
    """
    root = Path(path)
    entries = []
    for sample in split.samples:
        files = _sample_files(sample.index)
        write_tensor(root / files["image"], sample.image, "f8")
        write_tensor(root / files["labels"], sample.labels.labels, "i4")
        write_tensor(root / files["distance"], sample.distance.values, "f8")
        write_tensor(root / files["contour"], sample.contour.values, "u1")
        entries.append({"index": sample.index, **files})

    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "split": split.name,
        "seed": int(split.seed),
        "count": len(entries),
        "num_classes": int(split.num_classes),
        "label_noise": float(split.label_noise),
        **(extra or {}),
        "samples": entries,
    }
    manifest_path = root / MANIFEST_NAME
    atomic_write_text(manifest_path, yaml.safe_dump(manifest, sort_keys=False))
    return manifest_path


def _load_manifest(root: Path) -> Dict[str, Any]:
    if not root.is_dir():
        raise MissingInputError(f"Dataset directory not found: {root}")
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingInputError(f"No manifest in {root}")
    try:
        manifest = yaml.safe_load(manifest_path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, yaml.YAMLError) as e:
        raise DatasetFormatError(f"{manifest_path}: unreadable manifest ({e})")
    if not isinstance(manifest, dict) or manifest.get("format") != MANIFEST_FORMAT:
        raise DatasetFormatError(f"{manifest_path}: not a {MANIFEST_FORMAT} manifest")
    if manifest.get("version") != MANIFEST_VERSION:
        raise VersionMismatchError(
            f"{manifest_path}: manifest version {manifest.get('version')} is not supported"
        )
    samples = manifest.get("samples") or []
    if manifest.get("count") != len(samples):
        raise DatasetFormatError(
            f"{manifest_path}: count {manifest.get('count')} does not match {len(samples)} listed samples"
        )
    return manifest


def read_dataset(path: PathLike) -> DatasetSplit:
    """Load and validate a split directory written by write_dataset"""
    root = Path(path)
    manifest = _load_manifest(root)
    num_classes = int(manifest["num_classes"])
    samples = []
    for entry in manifest["samples"]:
        image = read_tensor(root / entry["image"])
        labels = read_tensor(root / entry["labels"])
        distance = read_tensor(root / entry["distance"])
        contour = read_tensor(root / entry["contour"])
        if not (image.shape[1:] == labels.shape == distance.shape == contour.shape):
            raise DatasetFormatError(f"{root}: sample {entry['index']} has inconsistent extents")
        samples.append(Sample(
            index=int(entry["index"]),
            image=image,
            labels=LabelMap(labels, num_classes),
            distance=DistanceMap(distance),
            contour=ContourMap(contour),
        ))
    return DatasetSplit(name=manifest["split"], seed=int(manifest["seed"]), num_classes=num_classes,
                        samples=samples, label_noise=float(manifest.get("label_noise", 0.0)))


def read_splits(root: PathLike, names: Sequence[str] = SPLITS) -> Dict[str, DatasetSplit]:
    root = Path(root)
    if not root.is_dir():
        raise MissingInputError(f"Dataset directory not found: {root}")
    return {name: read_dataset(root / name) for name in names}


def verify_dataset(path: PathLike) -> int:
    """
    Re-read a split and recompute its targets from the stored labels

    Returns:
        Number of verified samples
    """
    split = read_dataset(path)
    for sample in split.samples:
        distance, contour = target_maps(sample.labels)
        if not np.array_equal(distance.values, sample.distance.values):
            raise DatasetFormatError(f"{path}: stored distance target of sample {sample.index} is stale")
        if not np.array_equal(contour.values, sample.contour.values):
            raise DatasetFormatError(f"{path}: stored contour target of sample {sample.index} is stale")
    return len(split)
