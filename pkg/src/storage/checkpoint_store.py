"""
PLMP Model Checkpoints

Layout (little-endian):
    4 bytes   magic "PLMP"
    1 byte    version (1)
    u32 + N   Architecture as UTF-8 JSON (field-tagged, sorted keys)
    u32       tensor count
    per tensor:
        u16 + N   name (UTF-8)
        u8        rank
        u32 x rank  shape
        f64 x prod(shape)  values, C order
    u64       init_seed

Encoding is deterministic, so identical parameters give identical bytes.
"""

import json
import logging
import struct
from pathlib import Path
from typing import List, Union

import numpy as np

from src.core.errors import FormatError, NotFound
from src.core.net import validate_params
from src.models.config import Architecture
from src.models.domain import ModelParams

logger = logging.getLogger(__name__)

MAGIC = b"PLMP"
VERSION = 1
SUFFIX = ".plmp"


def encode_params(params: ModelParams) -> bytes:
    arch_json = json.dumps(params.arch.model_dump(mode="json"), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(arch_json)), arch_json]
    parts.append(struct.pack("<I", len(params.tensors)))
    for name, tensor in params.tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    parts.append(struct.pack("<Q", params.init_seed))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.source = source
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise FormatError(f"{self.source}: truncated at byte {self.offset}")
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def decode_params(data: bytes, source: str = "PLMP data") -> ModelParams:
    """
    Parse PLMP bytes into validated ModelParams.

    Raises:
        FormatError: Bad magic/version, truncation, trailing bytes or tensors
            that do not fit the stored architecture
    """
    reader = _Reader(data, source)
    if reader.take(4) != MAGIC:
        raise FormatError(f"{source}: bad magic")
    (version,) = reader.unpack("<B")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")

    (arch_len,) = reader.unpack("<I")
    try:
        arch = Architecture.model_validate(json.loads(reader.take(arch_len).decode("utf-8")))
    except ValueError as e:
        raise FormatError(f"{source}: invalid architecture block: {e}") from e

    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I")
        n_values = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(reader.take(8 * n_values), dtype="<f8")
        tensors[name] = values.astype(np.float64).reshape(shape)
    (init_seed,) = reader.unpack("<Q")
    if reader.offset != len(data):
        raise FormatError(f"{source}: {len(data) - reader.offset} trailing bytes")

    params = ModelParams(arch=arch, tensors=tensors, init_seed=init_seed)
    try:
        validate_params(params)
    except ValueError as e:
        raise FormatError(f"{source}: {e}") from e
    return params


def write_checkpoint(params: ModelParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_bytes(encode_params(params))
    logger.debug(f"Wrote checkpoint {path}")
    return path


def read_checkpoint(path: Union[str, Path]) -> ModelParams:
    path = Path(path)
    if not path.exists():
        raise NotFound(f"Checkpoint not found: {path}")
    return decode_params(path.read_bytes(), source=str(path))


def checkpoint_name(index: int) -> str:
    return f"model_{index:03d}{SUFFIX}"


def read_checkpoints(location: Union[str, Path]) -> List[ModelParams]:
    """A single .plmp file, or every .plmp file of a directory in name order"""
    location = Path(location)
    if location.is_file():
        return [read_checkpoint(location)]
    if not location.is_dir():
        raise NotFound(f"Checkpoint path not found: {location}")
    paths = sorted(location.glob(f"*{SUFFIX}"))
    if not paths:
        raise NotFound(f"No {SUFFIX} checkpoints in {location}")
    return [read_checkpoint(p) for p in paths]
