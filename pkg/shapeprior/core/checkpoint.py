"""Model checkpoints: YAML header (config, shapes, seed) + float64 payloads"""

from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .errors import DatasetFormatError, MissingInputError
from .network import MultiHeadUNet, NetConfig, build, layer_shapes
from .storage import atomic_write_bytes, decode_blob, encode_blob

CHECKPOINT_MAGIC = "SPCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: Union[str, Path], model: MultiHeadUNet, metadata: Optional[Dict[str, Any]] = None):
    """
    Write the model's parameters in declaration order

    Args:
        path: Destination file
        model: Model to store
        metadata: Extra plain-YAML values (arm, epoch, validation loss, ...)
    """
    header = {
        "net": model.config.to_dict(),
        "seed": int(model.seed),
        "params": [{"name": p.name, "shape": list(p.shape)} for p in model.parameters],
        "metadata": dict(metadata or {}),
    }
    payload = b"".join(np.ascontiguousarray(p.data, dtype="<f8").tobytes() for p in model.parameters)
    atomic_write_bytes(path, encode_blob(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, header, payload))


def load_checkpoint(path: Union[str, Path]) -> Tuple[MultiHeadUNet, Dict[str, Any]]:
    """
    Read a checkpoint written by save_checkpoint

    Returns:
        (model, metadata)
    """
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Checkpoint not found: {path}")
    header, payload = decode_blob(path.read_bytes(), CHECKPOINT_MAGIC, CHECKPOINT_VERSION, str(path))

    try:
        config = NetConfig(**header["net"]).validate()
        seed = int(header["seed"])
        declared = [(entry["name"], tuple(entry["shape"])) for entry in header["params"]]
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetFormatError(f"{path}: malformed checkpoint header ({e})")
    if declared != layer_shapes(config):
        raise DatasetFormatError(f"{path}: parameter layout does not match its network config")

    model = build(config, seed)
    values = np.frombuffer(payload, dtype="<f8")
    offset = 0
    for param in model.parameters:
        count = param.size
        if offset + count > values.size:
            raise DatasetFormatError(f"{path}: payload ends inside parameter {param.name}")
        param.data = values[offset:offset + count].reshape(param.shape).astype(np.float64)
        offset += count
    if offset != values.size:
        raise DatasetFormatError(f"{path}: {values.size - offset} unused values in payload")
    return model, dict(header.get("metadata") or {})
