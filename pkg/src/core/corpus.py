"""
Corpus Ingestion

Reads PCM16 mono WAV files and label CSVs, cuts clips into fixed-length
training windows, aligns frame-rate regression targets to model frames and
assembles LabeledExamples from extracted features.

Segment ids are `<parent_id>@<k>`; everything before the last `@` is the
parent id used when merging segment decisions back to a file. Source ids
themselves may not contain `@`.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
import soundfile as sf

from src.core.errors import (
    ConfigError,
    CorruptHeader,
    DuplicateId,
    EmptyClip,
    EmptySeries,
    NotFound,
    ReservedId,
    SchemaMismatch,
    UnknownClassName,
    UnsupportedFormat,
)
from src.models.config import Architecture
from src.models.domain import (
    AudioClip,
    LabeledExample,
    LabelRow,
    LabelSchema,
    LabelTable,
    MelSpectrogram,
    Segment,
)

logger = logging.getLogger(__name__)

PCM16_SCALE = 32768.0
SEGMENT_SEPARATOR = "@"

PathLike = Union[str, Path]


# ============================================================================
# AUDIO
# ============================================================================

def load_wav(path: PathLike) -> AudioClip:
    """
    Read a RIFF/WAVE PCM16 mono file.

    Args:
        path: WAV file path

    Returns:
        AudioClip with samples = int16 / 32768 and the header sample rate

    Raises:
        NotFound: File does not exist
        UnsupportedFormat: Not WAV, not PCM_16 or not mono (field named in message)
        CorruptHeader: Header unreadable or data chunk empty
        ReservedId: File stem contains `@`
    """
    path = Path(path)
    if not path.exists():
        raise NotFound(f"Audio file not found: {path}")
    check_source_id(path.stem, str(path))

    try:
        info = sf.info(str(path))
    except (RuntimeError, sf.SoundFileError) as e:
        raise CorruptHeader(f"Cannot parse audio header of {path}: {e}") from e

    if info.format != "WAV":
        raise UnsupportedFormat(str(path), f"format={info.format}")
    if info.subtype != "PCM_16":
        raise UnsupportedFormat(str(path), f"subtype={info.subtype}")
    if info.channels != 1:
        raise UnsupportedFormat(str(path), f"channels={info.channels}")
    if info.frames == 0:
        raise CorruptHeader(f"Empty data chunk in {path}")

    try:
        raw, sample_rate = sf.read(str(path), dtype="int16", always_2d=False)
    except (RuntimeError, sf.SoundFileError) as e:
        raise CorruptHeader(f"Cannot read audio data of {path}: {e}") from e
    if raw.size == 0:
        raise CorruptHeader(f"Empty data chunk in {path}")

    samples = raw.astype(np.float64) / PCM16_SCALE
    logger.debug(f"Loaded {path.name}: {len(samples)} samples at {sample_rate} Hz")
    return AudioClip(samples=samples, sample_rate_hz=int(sample_rate), source_id=path.stem)


def save_wav(clip: AudioClip, path: PathLike) -> None:
    """Write a clip as PCM16 mono WAV (samples clipped to the int16 range)"""
    pcm = np.clip(np.round(clip.samples * PCM16_SCALE), -32768, 32767).astype(np.int16)
    sf.write(str(path), pcm, clip.sample_rate_hz, subtype="PCM_16", format="WAV")


# ============================================================================
# LABELS
# ============================================================================

def load_target_series(path: PathLike) -> np.ndarray:
    """Read a target series file: one real value per line"""
    path = Path(path)
    if not path.exists():
        raise NotFound(f"Target series file not found: {path}")
    text = path.read_text(encoding="utf-8").split()
    if not text:
        raise EmptySeries(f"Target series file is empty: {path}")
    return np.array([float(v) for v in text], dtype=np.float64)


def load_labels(path: PathLike, schema: LabelSchema) -> LabelTable:
    """
    Read a label CSV.

    Args:
        path: CSV with a header row
        schema: Names the id column and either class columns with class-name maps,
            or a target-series file column (paths relative to the CSV)

    Returns:
        LabelTable with one row per CSV line

    Raises:
        NotFound, SchemaMismatch, UnknownClassName, DuplicateId, ReservedId
    """
    path = Path(path)
    if not path.exists():
        raise NotFound(f"Label file not found: {path}")

    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    required = [schema.id_column]
    required += list(schema.class_columns) if schema.is_classification else [schema.target_column]
    missing = [col for col in required if col not in frame.columns]
    if missing:
        raise SchemaMismatch(f"{path}: missing column(s) {missing}; found {list(frame.columns)}")

    rows: List[LabelRow] = []
    seen = set()
    for line_no, record in enumerate(frame.to_dict("records"), start=2):
        source_id = record[schema.id_column].strip()
        check_source_id(source_id, f"{path}:{line_no}")
        if source_id in seen:
            raise DuplicateId(f"{path}:{line_no}: duplicate id {source_id!r}")
        seen.add(source_id)

        if schema.is_classification:
            task_labels: Dict[str, int] = {}
            for task, mapping in schema.class_columns.items():
                value = record[task].strip()
                if value not in mapping:
                    raise UnknownClassName(
                        f"{path}:{line_no}: {task}={value!r} not in {sorted(mapping)}"
                    )
                task_labels[task] = mapping[value]
            rows.append(LabelRow(source_id=source_id, task_labels=task_labels))
        else:
            series = load_target_series(path.parent / record[schema.target_column].strip())
            rows.append(
                LabelRow(
                    source_id=source_id,
                    target_series=series,
                    target_rate_hz=schema.target_rate_hz,
                )
            )

    logger.info(f"Loaded {len(rows)} label rows from {path}")
    return LabelTable(schema=schema, rows=rows)


# ============================================================================
# SEGMENTATION
# ============================================================================

def check_source_id(source_id: str, where: str) -> None:
    if SEGMENT_SEPARATOR in source_id:
        raise ReservedId(f"{where}: id {source_id!r} contains the segment separator {SEGMENT_SEPARATOR!r}")


def parent_id(source_id: str) -> str:
    """Strip a trailing `@<k>` segment suffix from an id"""
    head, sep, tail = source_id.rpartition(SEGMENT_SEPARATOR)
    if sep and tail.isdigit():
        return head
    return source_id


def segment(
    clip: AudioClip,
    window_s: float,
    hop_s: float,
    pad_last: bool,
    labels: Optional[Dict[str, int]] = None,
) -> List[Segment]:
    """
    Cut a clip into windows [k*hop, k*hop + window).

    The window that first reaches the end of the clip is the last one. If it is
    partial it is zero-padded when `pad_last`; otherwise it is kept (unpadded)
    when at least half a window long and dropped when shorter.

    Raises:
        EmptyClip: Clip has no samples
        ConfigError: Unless 0 < hop_s <= window_s
    """
    if len(clip.samples) == 0:
        raise EmptyClip(f"Clip {clip.source_id!r} has no samples")
    if not (0 < hop_s <= window_s):
        raise ConfigError(f"Require 0 < hop_s <= window_s, got hop={hop_s}, window={window_s}")

    rate = clip.sample_rate_hz
    win = int(round(window_s * rate))
    hop = int(round(hop_s * rate))
    n = len(clip.samples)

    segments: List[Segment] = []
    k = 0
    while k * hop < n:
        start = k * hop
        end = start + win
        chunk = clip.samples[start:end]
        if end > n:
            if pad_last:
                chunk = np.concatenate([chunk, np.zeros(win - len(chunk))])
            elif len(chunk) < win / 2:
                break
        segments.append(
            Segment(
                clip=AudioClip(chunk, rate, f"{clip.source_id}{SEGMENT_SEPARATOR}{k}"),
                parent_id=clip.source_id,
                offset_s=start / rate,
                labels=dict(labels or {}),
            )
        )
        if end >= n:
            break
        k += 1

    logger.debug(f"Segmented {clip.source_id}: {len(segments)} window(s)")
    return segments


# ============================================================================
# TARGET ALIGNMENT
# ============================================================================

def align_series(
    duration_s: float,
    series: np.ndarray,
    target_rate_hz: float,
    model_frame_rate_hz: float,
) -> np.ndarray:
    """
    Resample a target series onto model frames by linear interpolation.

    Output length is floor(duration_s * model_frame_rate_hz); frame t takes the
    series value at time t / model_frame_rate_hz, clamped to the last value
    beyond the end of the series.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.size == 0:
        raise EmptySeries("Target series is empty")
    if target_rate_hz <= 0 or model_frame_rate_hz <= 0:
        raise ConfigError("Target and model frame rates must be positive")

    n_out = int(np.floor(duration_s * model_frame_rate_hz + 1e-9))
    frame_times = np.arange(n_out) / model_frame_rate_hz
    series_times = np.arange(series.size) / target_rate_hz
    return np.interp(frame_times, series_times, series)


def align_targets(
    clip: AudioClip,
    series: np.ndarray,
    target_rate_hz: float,
    model_frame_rate_hz: float,
) -> np.ndarray:
    """align_series over the duration of `clip`"""
    return align_series(clip.duration_s, series, target_rate_hz, model_frame_rate_hz)


def targets_at_frames(
    series: np.ndarray,
    target_rate_hz: float,
    frame_index: np.ndarray,
    frame_rate_hz: float,
) -> np.ndarray:
    """
    Target values at feature frames `frame_index` (frame rate `frame_rate_hz`).

    Same interpolation and end-clamping as align_series, evaluated only at the
    requested frames.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.size == 0:
        raise EmptySeries("Target series is empty")
    if target_rate_hz <= 0 or frame_rate_hz <= 0:
        raise ConfigError("Target and model frame rates must be positive")
    frame_times = np.asarray(frame_index, dtype=np.float64) / frame_rate_hz
    return np.interp(frame_times, np.arange(series.size) / target_rate_hz, series)


# ============================================================================
# TRAINING EXAMPLES
# ============================================================================

def build_examples(
    features: Dict[str, MelSpectrogram],
    table: LabelTable,
    arch: Optional[Architecture] = None,
) -> List[LabeledExample]:
    """
    Join feature matrices with their labels.

    Classification: each feature id (segment ids included) inherits the labels
    of its parent id. Regression: the parent's target series is aligned at the
    feature frame rate and sampled at the input frame each model output frame
    is anchored to, so `arch` is required.

    Feature ids whose parent has no label row are skipped with a warning.
    """
    examples: List[LabeledExample] = []
    skipped = 0
    for source_id in sorted(features):
        spec = features[source_id]
        pid = parent_id(source_id)
        if pid not in table:
            skipped += 1
            continue
        row = table.get(pid)
        if table.schema.is_classification:
            examples.append(
                LabeledExample(source_id=source_id, features=spec.values, labels=dict(row.task_labels))
            )
        else:
            if arch is None:
                raise ConfigError("Regression examples need the architecture to place targets")
            index = np.asarray(arch.output_frame_index(spec.n_frames), dtype=np.int64)
            aligned = targets_at_frames(row.target_series, row.target_rate_hz, index, spec.frame_rate_hz)
            targets = {head.name: aligned.copy() for head in arch.heads}
            examples.append(LabeledExample(source_id=source_id, features=spec.values, targets=targets))

    if skipped:
        logger.warning(f"Skipped {skipped} feature file(s) without a label row")
    logger.info(f"Built {len(examples)} labeled examples")
    return examples
