"""Run configuration: packaged defaults, user YAML, command-line overrides"""

import copy
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Type, TypeVar, Union

import yaml
from dotenv import load_dotenv

from .dataset import DataConfig
from .errors import ConfigError, InvalidInputError, MissingInputError
from .losses import Arm
from .network import NetConfig
from .phantoms import OrganSpec, PhantomConfig
from .storage import atomic_write_text
from .training import TrainConfig

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
T = TypeVar("T")

SETTINGS_PATH = Path(__file__).parent.parent / "settings.yaml"
CONFIG_ENV = "SHAPEPRIOR_CONFIG"
RESOLVED_NAME = "resolved_config.yaml"
SECTIONS = ("seed", "threads", "data", "phantom", "net", "train", "paths")


@dataclass(frozen=True)
class Paths:
    dataset: str = "data"
    out: str = "runs"


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs, resolved before any work starts"""

    seed: int = 0
    threads: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: Paths = field(default_factory=Paths)

    def validate(self, consistent: bool = True) -> "RunConfig":
        """Check every section; consistent=False skips the phantom-versus-net cross-checks"""
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        try:
            self.data.validate()
            self.phantom.validate()
            self.net.validate()
            self.train.validate()
        except ConfigError:
            raise
        except InvalidInputError as e:
            raise ConfigError(str(e)) from e
        if not consistent:
            return self
        if self.net.num_classes != self.phantom.num_classes:
            raise ConfigError(
                f"net.num_classes is {self.net.num_classes} but the phantom defines "
                f"{len(self.phantom.organs)} organs + background"
            )
        factor = 2 ** self.net.depth
        if self.phantom.height % factor or self.phantom.width % factor:
            raise ConfigError(
                f"Phantom extents {self.phantom.height} x {self.phantom.width} are not divisible by "
                f"2^depth = {factor}"
            )
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "threads": self.threads,
            "data": self.data.to_dict(),
            "phantom": self.phantom.to_dict(),
            "net": self.net.to_dict(),
            "train": {k: v for k, v in self.train.to_dict().items() if k != "seed"},
            "paths": dataclasses.asdict(self.paths),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def load_settings(path: PathLike = SETTINGS_PATH) -> Dict[str, Any]:
    """Packaged defaults; falls back to the dataclass defaults if the file is missing"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return yaml.safe_load(f) or {}
    except FileNotFoundError:
        logger.warning("Settings file %s not found, using built-in defaults", path)
        return RunConfig().to_dict()


def read_config_file(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Config file not found: {path}")
    try:
        loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"{path}: not a valid YAML config ({e})")
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return loaded


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge mappings; lists and scalars in override replace base"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _coerce(section: str, key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{section}.{key}: expected {type(default).__name__}, got {value!r}")
    return value


def _build(cls: Type[T], section: str, raw: Any, skip=()) -> T:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"Section '{section}' must be a mapping")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"Unknown keys in '{section}': {', '.join(unknown)}")
    values = {k: _coerce(section, k, v, getattr(defaults, k)) for k, v in raw.items()}
    return dataclasses.replace(defaults, **values)


def _build_phantom(raw: Any) -> PhantomConfig:
    raw = dict(raw or {})
    organs_raw = raw.pop("organs", None)
    config = _build(PhantomConfig, "phantom", raw, skip=("organs",))
    if organs_raw is None:
        return config
    if not isinstance(organs_raw, list):
        raise ConfigError("phantom.organs must be a list")
    organs = []
    for i, entry in enumerate(organs_raw):
        if not isinstance(entry, dict):
            raise ConfigError(f"phantom.organs[{i}] must be a mapping")
        entry = dict(entry)
        missing = {"name", "min_area", "max_area", "intensity_low", "intensity_high"} - set(entry)
        if missing:
            raise ConfigError(f"phantom.organs[{i}] is missing {', '.join(sorted(missing))}")
        unknown = set(entry) - {f.name for f in dataclasses.fields(OrganSpec)}
        if unknown:
            raise ConfigError(f"Unknown keys in phantom.organs[{i}]: {', '.join(sorted(unknown))}")
        template = OrganSpec("template", 1, 1, 0.0, 0.0)
        organs.append(OrganSpec(**{k: _coerce(f"phantom.organs[{i}]", k, v, getattr(template, k))
                                   for k, v in entry.items()}))
    return dataclasses.replace(config, organs=tuple(organs))


def _build_train(raw: Any, seed: int) -> TrainConfig:
    raw = dict(raw or {})
    arm = raw.pop("arm", Arm.BASELINE.value)
    try:
        arm = Arm(arm)
    except ValueError:
        choices = ", ".join(a.value for a in Arm)
        raise ConfigError(f"train.arm must be one of {choices}, got {arm!r}")
    return dataclasses.replace(_build(TrainConfig, "train", raw, skip=("arm", "seed")), arm=arm, seed=seed)


def from_dict(raw: Dict[str, Any], consistent: bool = True) -> RunConfig:
    """Typed, validated RunConfig from a merged mapping"""
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"Unknown config sections: {', '.join(unknown)}")
    seed = _coerce("", "seed", raw.get("seed", 0), 0)
    threads = _coerce("", "threads", raw.get("threads", 1), 1)
    config = RunConfig(
        seed=seed,
        threads=threads,
        data=_build(DataConfig, "data", raw.get("data")),
        phantom=_build_phantom(raw.get("phantom")),
        net=_build(NetConfig, "net", raw.get("net")),
        train=_build_train(raw.get("train"), seed),
        paths=_build(Paths, "paths", raw.get("paths")),
    )
    return config.validate(consistent)


def resolve(config_path: Optional[PathLike] = None, overrides: Optional[Dict[str, Any]] = None,
            consistent: bool = True) -> RunConfig:
    """
    Merge defaults, the user config file and flag overrides into a RunConfig

    Args:
        config_path: User YAML; falls back to $SHAPEPRIOR_CONFIG (a .env file is honored)
        overrides: Nested mapping of flag values; None entries are ignored
        consistent: Require the phantom and network sections to agree

    Returns:
        Validated RunConfig
    """
    load_dotenv()
    merged = load_settings()
    config_path = config_path or os.getenv(CONFIG_ENV)
    if config_path:
        logger.debug("Loading config %s", config_path)
        merged = deep_merge(merged, read_config_file(config_path))
    if overrides:
        merged = deep_merge(merged, _drop_none(overrides))
    return from_dict(merged, consistent)


def _drop_none(mapping: Dict[str, Any]) -> Dict[str, Any]:
    cleaned = {}
    for key, value in mapping.items():
        if isinstance(value, dict):
            value = _drop_none(value)
            if value:
                cleaned[key] = value
        elif value is not None:
            cleaned[key] = value
    return cleaned


def write_resolved(config: RunConfig, out_dir: PathLike) -> Path:
    """Echo the resolved config into a run directory; it reproduces the run via --config"""
    path = Path(out_dir) / RESOLVED_NAME
    atomic_write_text(path, config.to_yaml())
    return path
