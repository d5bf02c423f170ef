"""Binary file format shared by dataset tensors and checkpoints

A file is a UTF-8 text header followed by a little-endian payload:

    <MAGIC> <VERSION>\\n
    <YAML mapping>\\n
    ...\\n
    <payload bytes>

The YAML document-end marker (``...``) closes the header. The header always
carries ``payload_bytes`` and ``sha256`` of the payload.
"""

import hashlib
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
import yaml

from .errors import (
    ChecksumError,
    DatasetFormatError,
    InvalidInputError,
    MissingFileError,
    TruncatedPayloadError,
    VersionMismatchError,
)

PathLike = Union[str, Path]

HEADER_END = b"\n...\n"
TENSOR_MAGIC = "SPTENSOR"
TENSOR_VERSION = 1

# dtype codes written into tensor headers
DTYPES = {
    "f8": np.dtype("<f8"),
    "i4": np.dtype("<i4"),
    "u1": np.dtype("<u1"),
}


def atomic_write_bytes(path: PathLike, data: bytes):
    """Write bytes to path via a temporary file and rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def atomic_write_text(path: PathLike, text: str):
    """Write UTF-8 text (LF line endings) atomically"""
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_blob(magic: str, version: int, header: Dict[str, Any], payload: bytes) -> bytes:
    """Serialize header and payload into the on-disk layout"""
    full_header = dict(header)
    full_header["payload_bytes"] = len(payload)
    full_header["sha256"] = hashlib.sha256(payload).hexdigest()
    text = yaml.safe_dump(full_header, sort_keys=False, default_flow_style=None)
    return f"{magic} {version}\n".encode("utf-8") + text.encode("utf-8").rstrip(b"\n") + HEADER_END + payload


def decode_blob(data: bytes, magic: str, version: int, source: str = "<bytes>") -> Tuple[Dict[str, Any], bytes]:
    """
    Parse a blob produced by encode_blob

    Args:
        data: Raw file contents
        magic: Expected magic word
        version: Supported format version
        source: Name used in error messages

    Returns:
        (header mapping, payload bytes)
    """
    first_nl = data.find(b"\n")
    if first_nl < 0:
        raise DatasetFormatError(f"{source}: missing header line")
    try:
        found_magic, found_version = data[:first_nl].decode("utf-8").split()
        found_version = int(found_version)
    except (UnicodeDecodeError, ValueError):
        raise DatasetFormatError(f"{source}: malformed header line")
    if found_magic != magic:
        raise DatasetFormatError(f"{source}: expected {magic} file, found {found_magic}")
    if found_version != version:
        raise VersionMismatchError(
            f"{source}: format version {found_version} is not supported (expected {version})"
        )

    end = data.find(HEADER_END, first_nl)
    if end < 0:
        raise DatasetFormatError(f"{source}: unterminated header")
    try:
        header = yaml.safe_load(data[first_nl + 1:end].decode("utf-8"))
    except (UnicodeDecodeError, yaml.YAMLError) as e:
        raise DatasetFormatError(f"{source}: unreadable header ({e})")
    if not isinstance(header, dict) or "payload_bytes" not in header or "sha256" not in header:
        raise DatasetFormatError(f"{source}: header lacks payload_bytes/sha256")

    payload = data[end + len(HEADER_END):]
    expected = int(header["payload_bytes"])
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{source}: payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise DatasetFormatError(f"{source}: {len(payload) - expected} trailing bytes after payload")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ChecksumError(f"{source}: payload checksum mismatch")
    return header, payload


def read_file(path: PathLike) -> bytes:
    """Read a referenced file, mapping absence to MissingFileError"""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"Referenced file does not exist: {path}")
    return path.read_bytes()


def write_tensor(path: PathLike, array: np.ndarray, dtype: str):
    """Store an array as a tensor file with the given dtype code"""
    if dtype not in DTYPES:
        raise InvalidInputError(f"Unknown dtype code: {dtype}")
    values = np.ascontiguousarray(array, dtype=DTYPES[dtype])
    header = {"dtype": dtype, "shape": [int(s) for s in values.shape]}
    atomic_write_bytes(path, encode_blob(TENSOR_MAGIC, TENSOR_VERSION, header, values.tobytes(order="C")))


def read_tensor(path: PathLike) -> np.ndarray:
    """Load a tensor file written by write_tensor"""
    header, payload = decode_blob(read_file(path), TENSOR_MAGIC, TENSOR_VERSION, str(path))
    dtype = DTYPES.get(header.get("dtype"))
    if dtype is None:
        raise DatasetFormatError(f"{path}: unknown dtype {header.get('dtype')!r}")
    shape = tuple(int(s) for s in header.get("shape", []))
    if int(np.prod(shape)) * dtype.itemsize != len(payload):
        raise DatasetFormatError(f"{path}: shape {shape} does not match payload size")
    # native-order copy so downstream math never sees a read-only buffer
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
