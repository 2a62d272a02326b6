"""
Checkpoint files

Layout (all integers little-endian):

    magic        8 bytes  b"HLGSETR\\x00"
    version      u32
    fingerprint  32 bytes sha256 of the canonical model-config JSON
    manifest     u32 length + utf-8 JSON (config, step, lr, seed, optimizer, final_norm)
    count        u32
    entries      count x { u32 name length, utf-8 name, u8 dtype tag, u8 rank,
                           rank x u64 extents, row-major little-endian payload }

dtype tags: 0 float32, 1 float64, 2 int64. Model tensors come first in
state_dict order, then optimizer moments named 'optim/<param>/<slot>'.
"""

import hashlib
import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from ..core.errors import CheckpointError, ShapeError
from ..core.module import Module
from ..models.config import ModelConfig, SetrConfig, canonical_dict, config_from_dict
from ..reports.pnm import write_bytes_atomic
from ..training.optim import TrainState

logger = logging.getLogger(__name__)

MAGIC = b"HLGSETR\x00"
VERSION = 1
OPTIM_PREFIX = "optim/"

DTYPE_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}
TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}


def config_fingerprint(config: ModelConfig) -> bytes:
    """sha256 of the canonical (sorted-key, compact) JSON of the model config"""
    text = json.dumps(canonical_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).digest()


@dataclass
class Checkpoint:
    config: ModelConfig
    fingerprint: bytes
    manifest: Dict[str, Any]
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    def model_state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v) for k, v in self.tensors.items() if not k.startswith(OPTIM_PREFIX))

    def train_state(self) -> TrainState:
        moments: Dict[str, Dict[str, np.ndarray]] = {}
        for key, value in self.tensors.items():
            if key.startswith(OPTIM_PREFIX):
                param, slot = key[len(OPTIM_PREFIX):].rsplit("/", 1)
                moments.setdefault(param, {})[slot] = value
        return TrainState(step=int(self.manifest.get("step", 0)), lr=float(self.manifest.get("lr", 0.0)),
                          seed=int(self.manifest.get("seed", 0)), moments=moments)


def _encode_entry(name: str, array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype not in DTYPE_TAGS:
        raise CheckpointError(f"tensor '{name}' has unsupported dtype {array.dtype}")
    tag = DTYPE_TAGS[array.dtype]
    encoded = name.encode("utf-8")
    header = struct.pack("<I", len(encoded)) + encoded + struct.pack("<BB", tag, array.ndim)
    header += b"".join(struct.pack("<Q", n) for n in array.shape)
    return header + np.ascontiguousarray(array, dtype=TAG_DTYPES[tag]).tobytes()


def encode_checkpoint(model: Module, config: ModelConfig, state: Optional[TrainState] = None,
                      optimizer: Optional[str] = None) -> bytes:
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict(model.state_dict())
    if state is not None:
        for param, slots in state.moments.items():
            for slot, value in slots.items():
                tensors[f"{OPTIM_PREFIX}{param}/{slot}"] = value
    manifest = {
        "config": canonical_dict(config),
        "step": state.step if state else 0,
        "lr": state.lr if state else 0.0,
        "seed": state.seed if state else 0,
        "optimizer": optimizer,
        "final_norm": "norm applied to the last encoder layer" if isinstance(config, SetrConfig) else None,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), config_fingerprint(config),
             struct.pack("<I", len(manifest_bytes)), manifest_bytes, struct.pack("<I", len(tensors))]
    parts.extend(_encode_entry(name, value) for name, value in tensors.items())
    return b"".join(parts)


def save_checkpoint(path: Union[str, Path], model: Module, config: ModelConfig,
                    state: Optional[TrainState] = None, optimizer: Optional[str] = None) -> Path:
    """Serialize to a temp file next to `path`, then rename over it"""
    path = write_bytes_atomic(path, encode_checkpoint(model, config, state, optimizer))
    logger.info("Saved checkpoint %s (step %d)", path, state.step if state else 0)
    return path


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.source}: truncated at byte {self.pos} (needed {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    """
    Raises:
        CheckpointError: bad magic, unsupported version, corrupted manifest,
            truncated payload or trailing bytes
    """
    reader = _Reader(data, source)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version} (expected {VERSION})")
    fingerprint = reader.take(32)
    (length,) = reader.unpack("<I")
    try:
        manifest = json.loads(reader.take(length).decode("utf-8"))
        config = config_from_dict(manifest["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{source}: corrupted manifest ({exc})") from None
    if config_fingerprint(config) != fingerprint:
        raise CheckpointError(f"{source}: stored fingerprint does not match the stored config")
    (count,) = reader.unpack("<I")
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        tag, rank = reader.unpack("<BB")
        if tag not in TAG_DTYPES:
            raise CheckpointError(f"{source}: tensor '{name}' has unknown dtype tag {tag}")
        shape = tuple(reader.unpack("<Q")[0] for _ in range(rank))
        dtype = TAG_DTYPES[tag]
        payload = reader.take(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize)
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if reader.pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - reader.pos} unexpected trailing bytes")
    return Checkpoint(config, fingerprint, manifest, tensors)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror or exc})") from None
    return decode_checkpoint(data, str(path))


def restore_model(checkpoint: Checkpoint, model: Module, config: Optional[ModelConfig] = None,
                  allow_mismatch: bool = False) -> None:
    """
    Copy the stored model tensors into `model`

    Raises:
        CheckpointError: fingerprint differs from `config` (unless allow_mismatch)
            or the stored tensors do not fit the model
    """
    if config is not None and config_fingerprint(config) != checkpoint.fingerprint:
        if not allow_mismatch:
            raise CheckpointError(
                f"checkpoint was written for '{checkpoint.config.name}' with a different configuration "
                f"than '{config.name}'; pass allow_mismatch to load anyway"
            )
        logger.warning("Loading checkpoint of '%s' despite a config fingerprint mismatch", checkpoint.config.name)
    try:
        model.load_state_dict(checkpoint.model_state())
    except (KeyError, ShapeError) as exc:
        raise CheckpointError(f"checkpoint does not fit the model: {exc}") from None
