"""
Ensembles, Fusion and Evaluation

- train_ensemble: n_models networks on the full training set, diversified only
  by their seeds (init_seed = base_seed + i, shuffle and sampler seeds =
  base_seed + 1000 + i). Members may run in worker processes; results are
  collected in member order so the outcome never depends on scheduling.
- average_predictions / soft_vote: arithmetic and weighted means of
  PredictionSets (posteriors renormalized onto the simplex).
- evaluate: UAR + confusion for classification, Pearson r + MSE per file
  (then averaged over files) for regression.
- member_summary: per-member scores next to the ensemble score.
"""

import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from src.core import losses, net
from src.core.corpus import parent_id, targets_at_frames
from src.core.errors import (
    ConstantInput,
    IdMismatch,
    MemberFailure,
    MissingPrediction,
    NonPositiveWeights,
    SchemaMismatch,
    ShapeMismatch,
)
from src.core.training import TrainResult, train
from src.models.config import EnsembleSpec, SamplerConfig, TrainConfig
from src.models.domain import LabelTable, MelSpectrogram, MetricReport, ModelParams, PredictionSet

logger = logging.getLogger(__name__)

SHUFFLE_SEED_OFFSET = 1000


# ============================================================================
# TRAINING
# ============================================================================

def member_seeds(base_seed: int, index: int) -> Tuple[int, int]:
    """(init_seed, shuffle/sampler seed) of member `index`"""
    return base_seed + index, base_seed + SHUFFLE_SEED_OFFSET + index


def member_configs(spec: EnsembleSpec, index: int) -> Tuple[TrainConfig, SamplerConfig]:
    init_seed, shuffle_seed = member_seeds(spec.base_seed, index)
    tcfg = spec.tcfg.model_copy(update={"init_seed": init_seed, "shuffle_seed": shuffle_seed})
    sampler = spec.sampler.model_copy(update={"seed": shuffle_seed})
    return tcfg, sampler


_worker_data: Optional[list] = None


def _init_worker(data) -> None:
    global _worker_data
    _worker_data = data


def _train_member(spec: EnsembleSpec, index: int, data=None) -> TrainResult:
    tcfg, sampler = member_configs(spec, index)
    return train(spec.arch, data if data is not None else _worker_data, sampler, tcfg, member=index)


def train_members(spec: EnsembleSpec, data: Sequence, workers: int = 1) -> List[TrainResult]:
    """
    Train every member and return their TrainResults in member order.

    Args:
        spec: Member count, seeds, architecture and training settings
        data: LabeledExamples shared by all members
        workers: Worker processes (1 trains in-process)

    Raises:
        MemberFailure: The lowest-index failing member, wrapping its error
    """
    data = list(data)
    logger.info(f"Training ensemble of {spec.n_models} model(s) with {workers} worker(s)")
    if workers <= 1 or spec.n_models == 1:
        results = []
        for i in range(spec.n_models):
            try:
                results.append(_train_member(spec, i, data))
            except Exception as e:
                logger.error(f"Ensemble model {i} failed: {e}", exc_info=True)
                raise MemberFailure(i, e) from e
        return results

    with ProcessPoolExecutor(
        max_workers=min(workers, spec.n_models), initializer=_init_worker, initargs=(data,)
    ) as pool:
        futures = [pool.submit(_train_member, spec, i) for i in range(spec.n_models)]
        outcomes = []
        for future in futures:
            error = future.exception()
            outcomes.append(error if error is not None else future.result())

    for i, outcome in enumerate(outcomes):
        if isinstance(outcome, BaseException):
            logger.error(f"Ensemble model {i} failed: {outcome}", exc_info=outcome)
            raise MemberFailure(i, outcome) from outcome
    return outcomes


def train_ensemble(spec: EnsembleSpec, data: Sequence, workers: int = 1) -> List[ModelParams]:
    """Parameters of every member, in member order"""
    return [result.params for result in train_members(spec, data, workers)]


# ============================================================================
# PREDICTION
# ============================================================================

def predict_model(
    params: ModelParams,
    features: Dict[str, MelSpectrogram],
    class_names: Optional[Dict[str, List[str]]] = None,
) -> Dict[str, PredictionSet]:
    """
    One PredictionSet per head for a set of feature matrices.

    Classification posteriors of segment ids (`parent@k`) are merged per parent
    id with merge_segment_predictions. Sequence-regression rows carry the input
    frame each output value is anchored to.
    """
    arch = params.arch
    class_names = class_names or {}
    sets: Dict[str, PredictionSet] = {}
    outputs = {source_id: net.predict(params, features[source_id]) for source_id in sorted(features)}

    for head in arch.heads:
        if head.kind == "classification":
            grouped: Dict[str, List[np.ndarray]] = defaultdict(list)
            for source_id, out in outputs.items():
                grouped[parent_id(source_id)].append(out[head.name])
            rows = {pid: net.merge_segment_predictions(posts) for pid, posts in grouped.items()}
            names = class_names.get(head.name) or [f"class_{c}" for c in range(head.n_classes)]
            sets[head.name] = PredictionSet(task=head.name, rows=rows, class_names=list(names))
        else:
            rows = {source_id: out[head.name] for source_id, out in outputs.items()}
            index = {}
            for source_id, spec in features.items():
                if head.kind == "regression_sequence":
                    index[source_id] = np.asarray(arch.output_frame_index(spec.n_frames), dtype=np.int64)
                else:
                    index[source_id] = np.array([spec.n_frames - 1], dtype=np.int64)
            sets[head.name] = PredictionSet(task=head.name, rows=rows, frame_index=index)
    return sets


# ============================================================================
# COMBINATION
# ============================================================================

def _check_aligned(sets: Sequence[PredictionSet]) -> None:
    if not sets:
        raise ValueError("Need at least one PredictionSet")
    first = sets[0]
    for other in sets[1:]:
        if other.task != first.task:
            raise IdMismatch(f"Task {other.task!r} does not match {first.task!r}")
        if set(other.rows) != set(first.rows):
            missing = sorted(set(first.rows) ^ set(other.rows))[:5]
            raise IdMismatch(f"Prediction ids differ (e.g. {missing})")
        if other.class_names != first.class_names:
            raise ShapeMismatch(f"Class names {other.class_names} do not match {first.class_names}")
        for source_id, row in first.rows.items():
            if other.rows[source_id].shape != row.shape:
                raise ShapeMismatch(
                    f"{source_id}: shape {other.rows[source_id].shape} does not match {row.shape}"
                )
            if first.frame_index is not None and other.frame_index is not None:
                if not np.array_equal(first.frame_index[source_id], other.frame_index[source_id]):
                    raise ShapeMismatch(f"{source_id}: frame indices differ between prediction sets")


def soft_vote(sources: Sequence[PredictionSet], weights: Sequence[float]) -> PredictionSet:
    """
    Weighted mean of aligned PredictionSets.

    Weights are normalized to sum 1; posterior rows are renormalized.

    Raises:
        NonPositiveWeights: A negative weight or a zero weight sum
        IdMismatch, ShapeMismatch: Sources are not aligned
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(sources),):
        raise NonPositiveWeights(f"Expected {len(sources)} weights, got {weights.size}")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise NonPositiveWeights(f"Weights must be nonnegative with a positive sum, got {weights.tolist()}")
    _check_aligned(sources)
    weights = weights / weights.sum()

    first = sources[0]
    rows: Dict[str, np.ndarray] = {}
    for source_id in first.rows:
        fused = sum(w * s.rows[source_id] for w, s in zip(weights, sources))
        if first.is_classification:
            fused = fused / fused.sum()
        rows[source_id] = fused
    frame_index = next((s.frame_index for s in sources if s.frame_index is not None), None)
    return PredictionSet(
        task=first.task,
        rows=rows,
        class_names=first.class_names,
        frame_index={k: v.copy() for k, v in frame_index.items()} if frame_index else None,
    )


def average_predictions(members: Sequence[PredictionSet]) -> PredictionSet:
    """Equal-weight soft_vote of ensemble members"""
    return soft_vote(members, [1.0] * len(members))


# ============================================================================
# EVALUATION
# ============================================================================

def _evaluate_classification(pred: PredictionSet, labels: LabelTable) -> MetricReport:
    schema = labels.schema
    if pred.task not in schema.class_columns:
        raise SchemaMismatch(f"Label table has no task {pred.task!r}; tasks: {labels.tasks}")
    expected = schema.class_names(pred.task)
    if pred.n_classes != len(expected):
        raise ShapeMismatch(f"Predictions have {pred.n_classes} classes, labels define {len(expected)}")

    true, decided = [], []
    for row in labels.rows:
        if row.source_id not in pred.rows:
            raise MissingPrediction(f"No prediction for labeled id {row.source_id!r}")
        true.append(row.task_labels[pred.task])
        # argmax returns the lowest index on ties
        decided.append(int(np.argmax(pred.rows[row.source_id])))
    matrix = losses.confusion(true, decided, len(expected))
    return MetricReport(uar=losses.uar(matrix), confusion=matrix.tolist())


def _evaluate_regression(
    pred: PredictionSet,
    labels: LabelTable,
    frame_rate_hz: Optional[float],
) -> MetricReport:
    rs: List[float] = []
    mses: List[float] = []
    pooled_pred: List[float] = []
    pooled_true: List[float] = []
    for row in labels.rows:
        if row.source_id not in pred.rows:
            raise MissingPrediction(f"No prediction for labeled id {row.source_id!r}")
        values = pred.rows[row.source_id]
        if pred.frame_index is not None and row.source_id in pred.frame_index:
            index = pred.frame_index[row.source_id]
        else:
            index = np.arange(values.size)
        rate = frame_rate_hz if frame_rate_hz is not None else row.target_rate_hz
        truth = targets_at_frames(row.target_series, row.target_rate_hz, index, rate)

        mses.append(losses.mse(values, truth)[0])
        pooled_pred.extend(values.tolist())
        pooled_true.extend(truth.tolist())
        if values.size < 2 or np.ptp(truth) == 0.0:
            continue
        try:
            rs.append(losses.pearson_r(values, truth))
        except ConstantInput:
            rs.append(0.0)

    pearson: Optional[float] = float(np.mean(rs)) if rs else None
    if not rs and len(pooled_true) >= 2 and np.ptp(pooled_true) > 0:
        try:
            pearson = losses.pearson_r(pooled_pred, pooled_true)
        except ConstantInput:
            pearson = 0.0
    return MetricReport(pearson_r=pearson, mse=float(np.mean(mses)))


def evaluate(
    pred: PredictionSet,
    labels: LabelTable,
    frame_rate_hz: Optional[float] = None,
) -> MetricReport:
    """
    Score predictions against a label table.

    Args:
        pred: Predictions for one task
        labels: Every row must have a prediction; extra predictions are ignored
        frame_rate_hz: Feature frame rate that regression frame_index values
            refer to (default: the target series rate)

    Returns:
        Classification: confusion (argmax decisions) and UAR. Regression: mean
        per-file Pearson r (files with a constant target skipped, a constant
        prediction scoring 0; pooled over files when every file has a single
        value) and mean per-file MSE.

    Raises:
        MissingPrediction: A labeled id has no prediction row
    """
    if pred.is_classification:
        report = _evaluate_classification(pred, labels)
    else:
        report = _evaluate_regression(pred, labels, frame_rate_hz)
    logger.info(f"Evaluated task {pred.task!r} on {len(labels)} ids: {dict(report.as_rows()[:3])}")
    return report


class MemberSummary(BaseModel):
    """Per-member scores against the ensemble score"""

    metric: str
    member_scores: List[float]
    average: float
    best_member: int
    best: float
    ensemble: float


def _primary(report: MetricReport) -> Tuple[str, float]:
    if report.uar is not None:
        return "uar", report.uar
    if report.pearson_r is not None:
        return "pearson_r", report.pearson_r
    return "mse", report.mse


def member_summary(
    members: Sequence[PredictionSet],
    labels: LabelTable,
    frame_rate_hz: Optional[float] = None,
) -> MemberSummary:
    """
    Evaluate each member and the averaged ensemble.

    The primary metric is UAR (classification) or Pearson r (regression);
    the best member maximizes it (minimizes it for MSE), lowest index on ties.
    """
    reports = [evaluate(m, labels, frame_rate_hz) for m in members]
    metric = _primary(reports[0])[0]
    scores = [_primary(r)[1] for r in reports]
    chooser = np.argmin if metric == "mse" else np.argmax
    best = int(chooser(scores))
    ensemble_score = _primary(evaluate(average_predictions(members), labels, frame_rate_hz))[1]
    return MemberSummary(
        metric=metric,
        member_scores=scores,
        average=float(np.mean(scores)),
        best_member=best,
        best=scores[best],
        ensemble=ensemble_score,
    )
