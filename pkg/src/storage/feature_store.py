"""
PLFB Feature Files

Layout (little-endian):
    4 bytes   magic "PLFB"
    1 byte    version (1)
    u32       frames
    u32       bands
    f64       frame rate (Hz)
    f32 x frames*bands   values, frame-major
    f64 x bands          band centers (Hz)

Per-cell saliency maps reuse the same layout.
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from src.core.errors import FormatError, NotFound
from src.models.domain import MelSpectrogram

logger = logging.getLogger(__name__)

MAGIC = b"PLFB"
VERSION = 1
SUFFIX = ".plfb"
_HEADER = struct.Struct("<4sBIId")


def encode_features(spec: MelSpectrogram) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, spec.n_frames, spec.n_bands, float(spec.frame_rate_hz))
    values = np.ascontiguousarray(spec.values, dtype="<f4").tobytes()
    centers = np.ascontiguousarray(spec.band_centers_hz, dtype="<f8").tobytes()
    return header + values + centers


def decode_features(data: bytes, source_id: str = "") -> MelSpectrogram:
    """
    Parse PLFB bytes.

    Raises:
        FormatError: Bad magic, unknown version or wrong payload length
    """
    if len(data) < _HEADER.size:
        raise FormatError(f"{source_id or 'PLFB data'}: truncated header ({len(data)} bytes)")
    magic, version, frames, bands, frame_rate = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{source_id or 'PLFB data'}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{source_id or 'PLFB data'}: unsupported version {version}")
    expected = _HEADER.size + 4 * frames * bands + 8 * bands
    if len(data) != expected:
        raise FormatError(f"{source_id or 'PLFB data'}: {len(data)} bytes, expected {expected}")

    offset = _HEADER.size
    values = np.frombuffer(data, dtype="<f4", count=frames * bands, offset=offset).reshape(frames, bands)
    centers = np.frombuffer(data, dtype="<f8", count=bands, offset=offset + 4 * frames * bands)
    return MelSpectrogram(
        values=values.astype(np.float64),
        frame_rate_hz=frame_rate,
        band_centers_hz=centers.astype(np.float64),
        source_id=source_id,
    )


def write_features(spec: MelSpectrogram, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_bytes(encode_features(spec))
    return path


def read_features(path: Union[str, Path]) -> MelSpectrogram:
    path = Path(path)
    if not path.exists():
        raise NotFound(f"Feature file not found: {path}")
    return decode_features(path.read_bytes(), source_id=path.stem)


def read_feature_dir(directory: Union[str, Path]) -> Dict[str, MelSpectrogram]:
    """All *.plfb files of a directory keyed by file stem (the source id)"""
    directory = Path(directory)
    if not directory.is_dir():
        raise NotFound(f"Feature directory not found: {directory}")
    features = {path.stem: read_features(path) for path in sorted(directory.glob(f"*{SUFFIX}"))}
    logger.info(f"Read {len(features)} feature file(s) from {directory}")
    return features
