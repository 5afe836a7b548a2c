"""
Binary checkpoint format.

    magic "PDCK" | u32 version | u64 header length | header JSON
    | float64 little-endian payload in manifest order | sha256 of everything before it

The header holds the model config, the tensor manifest (name, shape, byte
offset into the payload), optional Adam state manifest and free-form
metadata. Serialization is deterministic: saving a loaded checkpoint gives
back the same bytes.
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import CheckpointError, CheckpointVersionError, ChecksumError
from .optimizer import AdamState
from .transformer import ModelConfig, TransformerWeights, weights_from_named

logger = logging.getLogger(__name__)

MAGIC = b"PDCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_DIGEST_SIZE = hashlib.sha256().digest_size
_LE_F64 = np.dtype("<f8")


@dataclass
class Checkpoint:
    config: ModelConfig
    weights: TransformerWeights
    optimizer_state: Optional[AdamState] = None
    extra: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: Dict = field(default_factory=dict)


def _manifest(named: List[Tuple[str, np.ndarray]], start: int) -> Tuple[List[Dict], int]:
    entries = []
    offset = start
    for name, array in named:
        entries.append({"name": name, "shape": list(array.shape), "offset": offset})
        offset += array.size * _LE_F64.itemsize
    return entries, offset


def save_checkpoint(
    path: Union[str, Path],
    config: ModelConfig,
    weights: TransformerWeights,
    optimizer_state: Optional[AdamState] = None,
    extra: Optional[Mapping[str, np.ndarray]] = None,
    metadata: Optional[Mapping] = None,
) -> Path:
    """
    Write a checkpoint atomically (temporary file + rename).

    Args:
        extra: Additional named tensors stored after the weights, e.g. the
            mapping matrices of a distilled student.
        metadata: JSON-serializable values kept in the header.
    """
    path = Path(path)
    named = [(name, np.asarray(array, dtype=np.float64)) for name, array in weights.state_dict().items()]
    extra_named = [(name, np.asarray(v, dtype=np.float64)) for name, v in sorted((extra or {}).items())]
    tensors, end = _manifest(named + extra_named, 0)

    optimizer = None
    optimizer_named: List[Tuple[str, np.ndarray]] = []
    if optimizer_state is not None:
        optimizer_named = sorted(optimizer_state.named_arrays().items())
        entries, end = _manifest(optimizer_named, end)
        optimizer = {"step": optimizer_state.step, "tensors": entries}

    header = {
        "config": config.to_dict(),
        "tensors": tensors,
        "extra": [name for name, _ in extra_named],
        "optimizer": optimizer,
        "metadata": dict(metadata or {}),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = bytearray(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
    body += header_bytes
    for _, array in named + extra_named + optimizer_named:
        body += np.ascontiguousarray(array, dtype=_LE_F64).tobytes()
    body += hashlib.sha256(body).digest()

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(bytes(body))
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"💾 Saved checkpoint {path} ({len(body)} bytes, {len(tensors)} tensors)")
    return path


def _read_arrays(payload: memoryview, entries: List[Dict], path: Path) -> Dict[str, np.ndarray]:
    arrays = {}
    for entry in entries:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        stop = start + count * _LE_F64.itemsize
        if start < 0 or stop > len(payload):
            raise CheckpointError(f"{path}: tensor {entry['name']} runs past the payload")
        arrays[entry["name"]] = np.frombuffer(payload[start:stop], dtype=_LE_F64).astype(np.float64).reshape(shape)
    return arrays


def load_checkpoint(
    path: Union[str, Path],
    expected_config: Optional[ModelConfig] = None,
    requires_grad: bool = True,
) -> Checkpoint:
    """
    Read and verify a checkpoint.

    Args:
        expected_config: When given, tensors are bound to this config instead of
            the stored one, so a mismatching manifest surfaces as a ShapeError.
        requires_grad: Whether the loaded weights are trainable.

    Raises:
        CheckpointError: missing file, bad magic, or malformed header.
        ChecksumError: the stored digest does not match; names the covered byte range.
        CheckpointVersionError: written by another format version.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < _PREFIX.size + _DIGEST_SIZE:
        raise CheckpointError(f"{path} is too short to be a checkpoint ({len(raw)} bytes)")
    magic, version, header_len = _PREFIX.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path} does not start with the checkpoint magic {MAGIC!r}")

    covered = len(raw) - _DIGEST_SIZE
    if hashlib.sha256(raw[:covered]).digest() != raw[covered:]:
        raise ChecksumError(str(path), 0, covered)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path} has format version {version}, this build reads {FORMAT_VERSION}")

    header_end = _PREFIX.size + header_len
    try:
        header = json.loads(raw[_PREFIX.size : header_end].decode("utf-8"))
        stored_config = ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError) as e:
        raise CheckpointError(f"{path} has a malformed header: {e}") from e

    payload = memoryview(raw)[header_end:covered]
    arrays = _read_arrays(payload, header["tensors"], path)
    extra = {name: arrays.pop(name) for name in header.get("extra", [])}
    config = expected_config or stored_config
    weights = weights_from_named(config, arrays, requires_grad=requires_grad)

    state = None
    if header.get("optimizer"):
        optimizer_arrays = _read_arrays(payload, header["optimizer"]["tensors"], path)
        state = AdamState.from_named(int(header["optimizer"]["step"]), optimizer_arrays)
    return Checkpoint(config, weights, state, extra, header.get("metadata", {}))


def file_digest(path: Union[str, Path]) -> str:
    """sha256 hex digest of the whole file, for before/after immutability checks."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def weights_digest(weights: TransformerWeights) -> str:
    """sha256 hex digest over every named parameter's name, shape and bytes."""
    digest = hashlib.sha256()
    for name, tensor in weights.named_parameters():
        array = np.ascontiguousarray(tensor.data)
        digest.update(f"{name}:{array.dtype.str}:{array.shape}".encode())
        digest.update(array.tobytes())
    return digest.hexdigest()
