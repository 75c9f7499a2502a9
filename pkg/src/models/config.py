"""
Run Configuration Models

This module defines the pydantic models for every tunable of the toolkit:
- CorpusConfig: segmentation and label-table layout
- TaskConfig: task names, kind and class-name maps
- DspConfig: STFT, Mel filterbank and low-frequency preprocessing
- SamplerConfig: class-imbalance resampling
- NetConfig / Architecture / HeadSpec: the Conv1D -> LSTM -> FF -> heads network
- TrainConfig / LossSpec: optimizer and loss selection
- EnsembleConfig / EnsembleSpec: member count, seeds and worker count
- SaliencyConfig: input-gradient analysis options
- ExtractConfig: feature variant written by `extract`
- IoConfig: input and output paths of one subcommand

RunConfig aggregates all sections as a pydantic-settings BaseSettings, so any
key can also come from PARALING_<SECTION>__<KEY> environment variables. The
flat `section.key = value` file format is parsed and rendered here too.
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.core.errors import ConfigError

logger = logging.getLogger(__name__)

MAX_SEED = 2**64 - 1


def _none_if_blank(v: Any) -> Any:
    if isinstance(v, str) and v.strip().lower() in ("", "none", "null"):
        return None
    return v


# ============================================================================
# CORPUS / TASK
# ============================================================================

class CorpusConfig(BaseModel):
    """
    Segmentation and label-table layout.

    Attributes:
        window_s: Segment length in seconds
        hop_s: Segment hop in seconds (0 < hop_s <= window_s)
        pad_last: Zero-pad the final partial window instead of the half-window rule
        segment: Split clips into windows at extraction time
        id_column: Label CSV column holding the source id
        target_column: Label CSV column naming the target-series file (regression)
        target_rate_hz: Sample rate of the target series files
    """
    model_config = ConfigDict(extra="forbid")

    window_s: float = Field(default=4.0, gt=0.0)
    hop_s: float = Field(default=4.0, gt=0.0)
    pad_last: bool = True
    segment: bool = True
    id_column: str = "id"
    target_column: str = "target_file"
    target_rate_hz: float = Field(default=25.0, gt=0.0)

    @model_validator(mode="after")
    def validate_hop(self):
        if self.hop_s > self.window_s:
            raise ValueError(f"hop_s ({self.hop_s}) must not exceed window_s ({self.window_s})")
        return self


class TaskConfig(BaseModel):
    """
    Tasks predicted by the network.

    `classes` maps each task to its ordered class names; the list position is
    the class index. In the flat file it is written `A=low|medium|high;V=...`.
    """
    model_config = ConfigDict(extra="forbid")

    kind: Literal["classification", "regression"] = "classification"
    names: List[str] = Field(default_factory=lambda: ["label"])
    classes: Dict[str, List[str]] = Field(default_factory=lambda: {"label": ["neg", "pos"]})

    @field_validator("names", mode="before")
    @classmethod
    def parse_names(cls, v):
        if isinstance(v, str):
            return [n.strip() for n in v.split(",") if n.strip()]
        return v

    @field_validator("classes", mode="before")
    @classmethod
    def parse_classes(cls, v):
        if isinstance(v, str):
            parsed: Dict[str, List[str]] = {}
            for part in v.split(";"):
                part = part.strip()
                if not part:
                    continue
                if "=" not in part:
                    raise ValueError(f"Invalid class map entry: {part!r} (expected task=a|b|c)")
                task, names = part.split("=", 1)
                parsed[task.strip()] = [n.strip() for n in names.split("|") if n.strip()]
            return parsed
        return v

    @model_validator(mode="after")
    def validate_classes(self):
        if not self.names:
            raise ValueError("task.names must name at least one task")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"task.names must be unique: {self.names}")
        if self.kind == "classification":
            for name in self.names:
                class_names = self.classes.get(name)
                if not class_names or len(class_names) < 2:
                    raise ValueError(f"Task {name!r} needs at least two class names in task.classes")
                if len(set(class_names)) != len(class_names):
                    raise ValueError(f"Duplicate class names for task {name!r}")
        return self

    def class_map(self, task: str) -> Dict[str, int]:
        """Class name -> index map for one task"""
        return {name: i for i, name in enumerate(self.classes[task])}


# ============================================================================
# DSP
# ============================================================================

class DspConfig(BaseModel):
    """
    Feature extraction settings.

    Attributes:
        n_fft: FFT size in samples
        hop: STFT hop in samples (hop <= n_fft)
        window_fn: Analysis window (hann | rectangular)
        n_mels: Number of Mel filters
        fmin_hz: Lowest filterbank edge
        fmax_hz: Highest filterbank edge (None = Nyquist)
        preemphasis_h: Preemphasis coefficient
        butterworth_order: Low-pass filter order
        butterworth_cutoff_hz: Low-pass -3 dB frequency
        log_floor: Energy floor applied before the natural log
        sample_rate_hz: Sample rate every input clip must have
        input: mel (log-Mel spectrogram) or raw (framed audio)
        raw_frame: Samples per frame on the raw-audio path
        lowest_k: Bands kept by the low-frequency feature variant
    """
    model_config = ConfigDict(extra="forbid")

    n_fft: int = Field(default=2048, gt=0)
    hop: int = Field(default=512, gt=0)
    window_fn: Literal["hann", "rectangular"] = "hann"
    n_mels: int = Field(default=64, gt=0)
    fmin_hz: float = Field(default=0.0, ge=0.0)
    fmax_hz: Optional[float] = None
    preemphasis_h: float = 1.0
    butterworth_order: int = Field(default=5, ge=1)
    butterworth_cutoff_hz: float = Field(default=400.0, gt=0.0)
    log_floor: float = Field(default=1e-10, gt=0.0)
    sample_rate_hz: int = Field(default=16000, gt=0)
    input: Literal["mel", "raw"] = "mel"
    raw_frame: int = Field(default=640, gt=0)
    lowest_k: int = Field(default=10, ge=1)

    @field_validator("fmax_hz", mode="before")
    @classmethod
    def parse_fmax(cls, v):
        return _none_if_blank(v)

    @model_validator(mode="after")
    def validate_ranges(self):
        if self.hop > self.n_fft:
            raise ValueError(f"dsp.hop ({self.hop}) must not exceed dsp.n_fft ({self.n_fft})")
        nyquist = self.sample_rate_hz / 2.0
        fmax = self.resolved_fmax()
        if not (0.0 <= self.fmin_hz < fmax <= nyquist):
            raise ValueError(
                f"Require 0 <= fmin_hz < fmax_hz <= Nyquist; got fmin={self.fmin_hz}, "
                f"fmax={fmax}, Nyquist={nyquist}"
            )
        return self

    def resolved_fmax(self) -> float:
        """fmax_hz with None resolved to the Nyquist frequency"""
        return self.fmax_hz if self.fmax_hz is not None else self.sample_rate_hz / 2.0

    @property
    def feature_frame_rate_hz(self) -> float:
        """Frame rate of the feature matrices this config produces"""
        if self.input == "raw":
            return self.sample_rate_hz / self.raw_frame
        return self.sample_rate_hz / self.hop


# ============================================================================
# SAMPLING
# ============================================================================

class SamplerConfig(BaseModel):
    """
    Class-imbalance resampling.

    `lam` is written `lambda` in files and environment variables; target
    distribution = lam * original + (1 - lam) * uniform.
    """
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    mode: Literal["none", "upsample", "probabilistic"] = "none"
    lam: float = Field(default=0.6, ge=0.0, le=1.0, alias="lambda")
    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    max_rejects: int = Field(default=100, gt=0)


# ============================================================================
# NETWORK
# ============================================================================

class HeadSpec(BaseModel):
    """One task head on top of the shared Conv1D -> LSTM trunk"""
    model_config = ConfigDict(extra="forbid")

    name: str
    kind: Literal["classification", "regression_scalar", "regression_sequence"]
    n_classes: Optional[int] = None
    ff_units: int = Field(default=100, ge=1)

    @model_validator(mode="after")
    def validate_kind(self):
        if self.kind == "classification":
            if self.n_classes is None or self.n_classes < 2:
                raise ValueError(f"Classification head {self.name!r} needs n_classes >= 2")
        elif self.n_classes is not None:
            raise ValueError(f"Regression head {self.name!r} must not set n_classes")
        return self

    @property
    def n_outputs(self) -> int:
        return self.n_classes if self.kind == "classification" else 1


class Architecture(BaseModel):
    """
    Network shape.

    Attributes:
        input_bands: Feature columns per frame
        conv_filters: Conv1D filter count
        conv_kernel: Conv1D kernel length in frames
        conv_stride: Conv1D stride in frames (valid padding)
        lstm_units: LSTM hidden size
        ff_units: Default hidden size for heads
        readout: Utterance-level readout of the LSTM sequence (final | mean)
        heads: Task heads, unique names
    """
    model_config = ConfigDict(extra="forbid")

    input_bands: int = Field(ge=1)
    conv_filters: int = Field(default=100, ge=1)
    conv_kernel: int = Field(default=5, ge=1)
    conv_stride: int = Field(default=1, ge=1)
    lstm_units: int = Field(default=100, ge=1)
    ff_units: int = Field(default=100, ge=1)
    readout: Literal["final", "mean"] = "final"
    heads: List[HeadSpec] = Field(min_length=1)

    @model_validator(mode="after")
    def validate_heads(self):
        names = [h.name for h in self.heads]
        if len(set(names)) != len(names):
            raise ValueError(f"Head names must be unique: {names}")
        return self

    def head(self, name: str) -> HeadSpec:
        for h in self.heads:
            if h.name == name:
                return h
        raise KeyError(name)

    def output_frames(self, n_input_frames: int) -> int:
        """Conv output frame count (valid padding); 0 if the input is too short"""
        if n_input_frames < self.conv_kernel:
            return 0
        return 1 + (n_input_frames - self.conv_kernel) // self.conv_stride

    def output_frame_index(self, n_input_frames: int) -> List[int]:
        """Input frame each conv output frame is anchored to (last frame of its receptive field)"""
        return [t * self.conv_stride + self.conv_kernel - 1 for t in range(self.output_frames(n_input_frames))]


class NetConfig(BaseModel):
    """Flat network keys; combined with input bands and tasks into an Architecture"""
    model_config = ConfigDict(extra="forbid")

    conv_filters: int = Field(default=100, ge=1)
    conv_kernel: int = Field(default=5, ge=1)
    conv_stride: int = Field(default=1, ge=1)
    lstm_units: int = Field(default=100, ge=1)
    ff_units: int = Field(default=100, ge=1)
    readout: Literal["final", "mean"] = "final"


# ============================================================================
# TRAINING
# ============================================================================

class LossSpec(BaseModel):
    """Loss for one head; `weight` scales the MSE term of corr_plus_mse"""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["corr", "mse", "corr_plus_mse", "cross_entropy"]
    weight: float = Field(default=0.1, ge=0.0)


class TrainConfig(BaseModel):
    """
    Optimizer and loop settings.

    `loss` selects the loss for sequence-regression heads; classification heads
    always use cross-entropy and scalar-regression heads use MSE.
    """
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=16, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    optimizer: Literal["sgd", "adam"] = "adam"
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    epsilon: float = Field(default=1e-8, gt=0.0)
    loss: Literal["corr", "mse", "corr_plus_mse"] = "corr_plus_mse"
    mse_weight: float = Field(default=0.1, ge=0.0)
    grad_clip: Optional[float] = 5.0
    init_seed: int = Field(default=0, ge=0, le=MAX_SEED)
    shuffle_seed: int = Field(default=0, ge=0, le=MAX_SEED)

    @field_validator("grad_clip", mode="before")
    @classmethod
    def parse_grad_clip(cls, v):
        v = _none_if_blank(v)
        if v is not None and float(v) == 0.0:
            return None
        return v

    @field_validator("grad_clip")
    @classmethod
    def validate_grad_clip(cls, v):
        if v is not None and v < 0:
            raise ValueError("grad_clip must be positive (0 or none disables clipping)")
        return v

    def loss_spec_for(self, head: HeadSpec) -> LossSpec:
        """Resolve the LossSpec for one head"""
        if head.kind == "classification":
            return LossSpec(kind="cross_entropy")
        if head.kind == "regression_scalar":
            return LossSpec(kind="mse")
        return LossSpec(kind=self.loss, weight=self.mse_weight)


class EnsembleConfig(BaseModel):
    """Member count, seed base and worker processes (workers is not written to the config dump)"""
    model_config = ConfigDict(extra="forbid")

    n_models: int = Field(default=10, ge=1)
    base_seed: int = Field(default=0, ge=0, le=MAX_SEED - 2000)
    workers: int = Field(default=1, ge=1)


class EnsembleSpec(BaseModel):
    """Everything needed to train one ensemble"""
    model_config = ConfigDict(extra="forbid")

    n_models: int = Field(default=10, ge=1)
    base_seed: int = Field(default=0, ge=0, le=MAX_SEED - 2000)
    arch: Architecture
    tcfg: TrainConfig = Field(default_factory=TrainConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)


class SaliencyConfig(BaseModel):
    """
    Input-gradient analysis.

    Attributes:
        target: Pre-softmax logit or posterior of the explained class
        absolute: Aggregate |gradient| instead of the signed gradient
        head: Head to explain (None = first head)
        class_index: Class to explain (None = each file's argmax)
        file: Feature id whose per-cell map is also written
    """
    model_config = ConfigDict(extra="forbid")

    target: Literal["logit", "probability"] = "logit"
    absolute: bool = True
    head: Optional[str] = None
    class_index: Optional[int] = Field(default=None, ge=0)
    file: Optional[str] = None

    @field_validator("head", "class_index", "file", mode="before")
    @classmethod
    def parse_optional(cls, v):
        return _none_if_blank(v)


# ============================================================================
# EXTRACTION / IO
# ============================================================================

class ExtractConfig(BaseModel):
    """
    Feature variant written by `extract`.

    plain: log-Mel spectrogram; preprocess: preemphasis + Butterworth low-pass
    first; lowest_k: keep the dsp.lowest_k lowest bands; low_freq: both.
    """
    model_config = ConfigDict(extra="forbid")

    variant: Literal["plain", "preprocess", "lowest_k", "low_freq"] = "plain"

    @property
    def preprocess(self) -> bool:
        return self.variant in ("preprocess", "low_freq")

    @property
    def lowest_k(self) -> bool:
        return self.variant in ("lowest_k", "low_freq")


IO_PATH_FIELDS = ("audio_dir", "features", "labels", "checkpoints", "predictions", "inputs", "members", "out")


class IoConfig(BaseModel):
    """
    Inputs and outputs of one subcommand, normally filled from its path flags.

    Relative paths in a config file are relative to that file's directory; the
    resolved-config dump writes them relative to the output directory.
    List-valued keys are comma-separated in files.
    """
    model_config = ConfigDict(extra="forbid")

    audio_dir: Optional[str] = None
    features: List[str] = Field(default_factory=list)
    labels: List[str] = Field(default_factory=list)
    checkpoints: Optional[str] = None
    predictions: Optional[str] = None
    inputs: List[str] = Field(default_factory=list)
    members: Optional[str] = None
    out: Optional[str] = None
    per_model: bool = False

    @field_validator("features", "labels", "inputs", mode="before")
    @classmethod
    def parse_paths(cls, v):
        if isinstance(v, str):
            return [p.strip() for p in v.split(",") if p.strip()]
        return v

    @field_validator("audio_dir", "checkpoints", "predictions", "members", "out", mode="before")
    @classmethod
    def parse_path(cls, v):
        return _none_if_blank(v)

    def relative_to(self, base_dir: Path) -> "IoConfig":
        """Copy with every path rewritten relative to `base_dir`"""
        base = os.path.abspath(base_dir)
        updates: Dict[str, Any] = {}
        for name in IO_PATH_FIELDS:
            value = getattr(self, name)
            if isinstance(value, list):
                updates[name] = [os.path.relpath(os.path.abspath(p), base) for p in value]
            elif value is not None:
                updates[name] = os.path.relpath(os.path.abspath(value), base)
        return self.model_copy(update=updates)


# ============================================================================
# RUN CONFIG (SETTINGS)
# ============================================================================

class RunConfig(BaseSettings):
    """
    Complete resolved configuration for one CLI run.

    Sources, lowest precedence first: built-in defaults, PARALING_* environment
    variables, the config file, then --set flags (file and flags arrive as
    init kwargs, which pydantic-settings ranks above the environment).
    """
    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    task: TaskConfig = Field(default_factory=TaskConfig)
    dsp: DspConfig = Field(default_factory=DspConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    net: NetConfig = Field(default_factory=NetConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    saliency: SaliencyConfig = Field(default_factory=SaliencyConfig)
    extract: ExtractConfig = Field(default_factory=ExtractConfig)
    io: IoConfig = Field(default_factory=IoConfig)

    model_config = SettingsConfigDict(
        env_prefix="PARALING_",
        env_nested_delimiter="__",
        case_sensitive=False,
        extra="forbid",
    )

    @model_validator(mode="after")
    def validate_task_combination(self):
        if self.task.kind == "regression":
            if self.corpus.segment:
                raise ValueError("Regression tasks require corpus.segment = false")
            if self.sampler.mode != "none":
                raise ValueError("Regression tasks require sampler.mode = none")
        if self.extract.lowest_k and self.dsp.input == "raw":
            raise ValueError(f"extract.variant = {self.extract.variant} needs dsp.input = mel")
        return self

    def architecture(self, input_bands: int) -> Architecture:
        """Build the Architecture for features with `input_bands` columns"""
        if self.task.kind == "classification":
            heads = [
                HeadSpec(
                    name=name,
                    kind="classification",
                    n_classes=len(self.task.classes[name]),
                    ff_units=self.net.ff_units,
                )
                for name in self.task.names
            ]
        else:
            heads = [
                HeadSpec(name=name, kind="regression_sequence", ff_units=self.net.ff_units)
                for name in self.task.names
            ]
        return Architecture(input_bands=input_bands, heads=heads, **self.net.model_dump())

    def ensemble_spec(self, input_bands: int) -> EnsembleSpec:
        return EnsembleSpec(
            n_models=self.ensemble.n_models,
            base_seed=self.ensemble.base_seed,
            arch=self.architecture(input_bands),
            tcfg=self.train,
            sampler=self.sampler,
        )


# ============================================================================
# FLAT FILE FORMAT
# ============================================================================

# Keys that only schedule work and never change outputs
SCHEDULING_KEYS = frozenset({"ensemble.workers"})


def parse_config_lines(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    """
    Parse `key = value` lines into a flat dict.

    Args:
        lines: Text lines; `#` starts a comment, blank lines are skipped
        source: Name used in error messages

    Returns:
        Flat mapping of dotted keys to raw string values

    Raises:
        ConfigError: On a line without `=` or a key without a section
    """
    flat: Dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.count(".") != 1:
            raise ConfigError(f"{source}:{lineno}: key {key!r} must look like section.name")
        flat[key] = value
    return flat


def _nest(flat: Dict[str, str]) -> Dict[str, Dict[str, str]]:
    nested: Dict[str, Dict[str, str]] = {}
    for key, value in flat.items():
        section, name = key.split(".", 1)
        nested.setdefault(section, {})[name] = value
    return nested


def _anchor_io_paths(flat: Dict[str, str], base_dir: Path) -> Dict[str, str]:
    """Resolve relative io.* paths of a config file against the file's directory"""
    anchored = dict(flat)
    for name in IO_PATH_FIELDS:
        key = f"io.{name}"
        if _none_if_blank(flat.get(key)) is None:
            continue
        parts = [p.strip() for p in flat[key].split(",") if p.strip()]
        anchored[key] = ",".join(p if Path(p).is_absolute() else str(base_dir / p) for p in parts)
    return anchored


def load_config(path: Optional[Path] = None, overrides: Optional[List[str]] = None) -> RunConfig:
    """
    Resolve the run configuration.

    Args:
        path: Optional config file
        overrides: `key=value` strings from --set and command flags (highest precedence);
            relative io paths in them are left relative to the working directory

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: On unreadable files, malformed lines, unknown keys or invalid values
    """
    flat: Dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        from_file = parse_config_lines(path.read_text(encoding="utf-8").splitlines(), str(path))
        flat.update(_anchor_io_paths(from_file, path.parent))
        logger.debug(f"Loaded {len(flat)} keys from {path}")
    if overrides:
        flat.update(parse_config_lines(overrides, "--set"))

    try:
        return RunConfig(**_nest(flat))
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def _render(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    if isinstance(value, dict):
        return ";".join(f"{k}={'|'.join(v)}" for k, v in value.items())
    return str(value)


def flatten_config(cfg: RunConfig, base_dir: Optional[Path] = None) -> Dict[str, str]:
    """
    Every resolved key as `section.name` -> rendered value.

    Scheduling-only keys (SCHEDULING_KEYS) are left out. With `base_dir`, io
    paths are rendered relative to it.
    """
    flat: Dict[str, str] = {}
    for section in RunConfig.model_fields:
        model: BaseModel = getattr(cfg, section)
        if section == "io" and base_dir is not None:
            model = cfg.io.relative_to(base_dir)
        for name, value in model.model_dump(by_alias=True).items():
            key = f"{section}.{name}"
            if key not in SCHEDULING_KEYS:
                flat[key] = _render(value)
    return flat


def dump_config(cfg: RunConfig, base_dir: Optional[Path] = None) -> str:
    """Render the resolved configuration as a sorted `key = value` file"""
    flat = flatten_config(cfg, base_dir)
    return "".join(f"{key} = {flat[key]}\n" for key in sorted(flat))
