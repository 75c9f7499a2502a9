"""
Domain Data Carriers

Array-bearing units of work are dataclasses over numpy arrays:
- AudioClip, Segment: raw signal and its fixed-length windows
- LabelRow, LabelTable: per-source labels or target series
- MelSpectrogram, FilterBank: DSP outputs
- LabeledExample: a feature matrix with its per-task labels / targets
- ModelParams: all trainable tensors of one network
- PredictionSet: per-source outputs of one model or one fused ensemble
- SaliencyMap: per-band input-gradient magnitudes

Validated records without arrays (LabelSchema, Distribution, MetricReport)
are pydantic models.
"""

import copy
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.config import Architecture


# ============================================================================
# AUDIO
# ============================================================================

@dataclass
class AudioClip:
    """
    Mono audio.

    Attributes:
        samples: 1-D float64 amplitudes (within [-1, 1] when read from PCM16)
        sample_rate_hz: Sample rate in Hz
        source_id: Identifier of the originating file or segment
    """
    samples: np.ndarray
    sample_rate_hz: int
    source_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"AudioClip samples must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass
class Segment:
    """Fixed-length window cut from a parent clip"""
    clip: AudioClip
    parent_id: str
    offset_s: float
    labels: Dict[str, int] = field(default_factory=dict)


# ============================================================================
# LABELS
# ============================================================================

class LabelSchema(BaseModel):
    """
    Describes the columns of a label CSV.

    Exactly one of `class_columns` (classification: task -> class name -> index)
    or `target_column` (regression: column holding a target-series file path)
    is set.
    """
    model_config = ConfigDict(extra="forbid")

    id_column: str = "id"
    class_columns: Dict[str, Dict[str, int]] = Field(default_factory=dict)
    target_column: Optional[str] = None
    target_rate_hz: Optional[float] = Field(default=None, gt=0.0)

    @model_validator(mode="after")
    def validate_kind(self):
        if bool(self.class_columns) == bool(self.target_column):
            raise ValueError("Schema needs exactly one of class_columns or target_column")
        if self.target_column and self.target_rate_hz is None:
            raise ValueError("Regression schema needs target_rate_hz")
        return self

    @property
    def is_classification(self) -> bool:
        return bool(self.class_columns)

    def class_names(self, task: str) -> List[str]:
        """Class names ordered by index"""
        mapping = self.class_columns[task]
        return [name for name, _ in sorted(mapping.items(), key=lambda kv: kv[1])]


@dataclass
class LabelRow:
    source_id: str
    task_labels: Dict[str, int] = field(default_factory=dict)
    target_series: Optional[np.ndarray] = None
    target_rate_hz: Optional[float] = None


@dataclass
class LabelTable:
    schema: LabelSchema
    rows: List[LabelRow] = field(default_factory=list)

    def __post_init__(self):
        self._by_id = {row.source_id: row for row in self.rows}

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, source_id: str) -> bool:
        return source_id in self._by_id

    def get(self, source_id: str) -> LabelRow:
        return self._by_id[source_id]

    @property
    def ids(self) -> List[str]:
        return [row.source_id for row in self.rows]

    @property
    def tasks(self) -> List[str]:
        if self.schema.is_classification:
            return list(self.schema.class_columns)
        return [self.schema.target_column]


# ============================================================================
# DSP
# ============================================================================

@dataclass
class MelSpectrogram:
    """
    Frames x bands feature matrix.

    Also carries raw-audio frame matrices (band_centers_hz are then sample
    offsets within a frame).
    """
    values: np.ndarray
    frame_rate_hz: float
    band_centers_hz: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.band_centers_hz = np.asarray(self.band_centers_hz, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"Spectrogram values must be 2-D, got shape {self.values.shape}")
        if self.values.shape[1] != len(self.band_centers_hz):
            raise ValueError(
                f"{self.values.shape[1]} bands but {len(self.band_centers_hz)} band centers"
            )
        if np.any(np.diff(self.band_centers_hz) <= 0):
            raise ValueError("band_centers_hz must be strictly increasing")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bands(self) -> int:
        return self.values.shape[1]


@dataclass
class FilterBank:
    weights: np.ndarray  # n_mels x (n_fft/2 + 1)
    centers_hz: np.ndarray


# ============================================================================
# TRAINING DATA / MODELS
# ============================================================================

@dataclass
class LabeledExample:
    """
    One training unit.

    Attributes:
        source_id: Feature file id (segment id for segmented inputs)
        features: frames x bands matrix
        labels: task -> class index (classification heads)
        targets: task -> value array aligned to model output frames (regression heads)
    """
    source_id: str
    features: np.ndarray
    labels: Dict[str, int] = field(default_factory=dict)
    targets: Dict[str, np.ndarray] = field(default_factory=dict)

    def label_tuple(self, tasks: List[str]) -> Tuple[int, ...]:
        return tuple(self.labels[t] for t in tasks)


@dataclass
class ModelParams:
    """
    Trainable tensors of one network, keyed by layer:

    - conv.W [filters x kernel x bands], conv.b [filters]
    - lstm.Wx [inputs x 4H], lstm.Wh [H x 4H], lstm.b [4H] (gate order i, f, o, g)
    - head.<name>.W1, head.<name>.b1, head.<name>.W2, head.<name>.b2
    """
    arch: Architecture
    tensors: Dict[str, np.ndarray]
    init_seed: int

    def copy(self) -> "ModelParams":
        return ModelParams(
            arch=self.arch.model_copy(deep=True),
            tensors={k: v.copy() for k, v in self.tensors.items()},
            init_seed=self.init_seed,
        )

    def __getitem__(self, key: str) -> np.ndarray:
        return self.tensors[key]

    def names(self) -> List[str]:
        return list(self.tensors)


@dataclass
class PredictionSet:
    """
    Outputs for one task.

    Attributes:
        task: Task name
        rows: source id -> posterior vector (classification) or value sequence (regression)
        class_names: Ordered class names; None for regression
        frame_index: Regression only: input feature frame index of each value
    """
    task: str
    rows: Dict[str, np.ndarray]
    class_names: Optional[List[str]] = None
    frame_index: Optional[Dict[str, np.ndarray]] = None

    def __post_init__(self):
        self.rows = {k: np.asarray(v, dtype=np.float64) for k, v in self.rows.items()}
        if self.class_names is not None:
            n = len(self.class_names)
            for source_id, row in self.rows.items():
                if row.shape != (n,):
                    raise ValueError(f"Posterior for {source_id} has shape {row.shape}, expected ({n},)")
                if np.any(row < 0) or abs(row.sum() - 1.0) > 1e-6:
                    raise ValueError(f"Posterior for {source_id} is not on the simplex: {row}")

    @property
    def is_classification(self) -> bool:
        return self.class_names is not None

    @property
    def n_classes(self) -> Optional[int]:
        return len(self.class_names) if self.class_names is not None else None

    @property
    def ids(self) -> List[str]:
        return list(self.rows)

    def with_task(self, task: str) -> "PredictionSet":
        return PredictionSet(
            task=task,
            rows=copy.deepcopy(self.rows),
            class_names=self.class_names,
            frame_index=copy.deepcopy(self.frame_index),
        )


@dataclass
class SaliencyMap:
    per_band: np.ndarray
    per_cell: Optional[np.ndarray] = None
    band_centers_hz: Optional[np.ndarray] = None


# ============================================================================
# VALIDATED RECORDS
# ============================================================================

class Distribution(BaseModel):
    """Class-index -> probability; nonnegative and summing to 1"""

    probs: Dict[int, float]

    @model_validator(mode="after")
    def validate_simplex(self):
        if sorted(self.probs) != list(range(len(self.probs))):
            raise ValueError(f"Distribution keys must be 0..n-1, got {sorted(self.probs)}")
        if any(p < 0 for p in self.probs.values()):
            raise ValueError("Probabilities must be nonnegative")
        if abs(sum(self.probs.values()) - 1.0) > 1e-9:
            raise ValueError(f"Probabilities must sum to 1, got {sum(self.probs.values())}")
        return self

    @classmethod
    def from_vector(cls, vector) -> "Distribution":
        return cls(probs={i: float(p) for i, p in enumerate(vector)})

    @property
    def n_classes(self) -> int:
        return len(self.probs)

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.probs[i] for i in range(len(self.probs))], dtype=np.float64)


class MetricReport(BaseModel):
    """
    Evaluation quantities.

    uar is present iff confusion is present; pearson_r and mse belong to
    regression reports.
    """

    pearson_r: Optional[float] = Field(default=None, ge=-1.0, le=1.0)
    mse: Optional[float] = Field(default=None, ge=0.0)
    uar: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    confusion: Optional[List[List[int]]] = None

    @model_validator(mode="after")
    def validate_uar(self):
        if (self.uar is None) != (self.confusion is None):
            raise ValueError("uar and confusion must be given together")
        return self

    def as_rows(self) -> List[Tuple[str, float]]:
        """(metric, value) rows for CSV / table output; confusion flattened as confusion_i_j"""
        rows: List[Tuple[str, float]] = []
        if self.uar is not None:
            rows.append(("uar", self.uar))
        if self.pearson_r is not None:
            rows.append(("pearson_r", self.pearson_r))
        if self.mse is not None:
            rows.append(("mse", self.mse))
        if self.confusion is not None:
            for i, row in enumerate(self.confusion):
                for j, count in enumerate(row):
                    rows.append((f"confusion_{i}_{j}", float(count)))
        return rows
