"""
CSV Result Files

- Prediction files: `id,<class_0>,...,<class_n-1>` (posteriors) or
  `id,frame_index,value` (regression). External systems' predictions enter
  fusion through the same format.
- Metric reports: `metric,value`
- Saliency: `band_index,center_hz,mean_abs_grad`
- Training logs: `model,epoch,head,loss,metric,value`

Rows are sorted by id and floats are written in shortest round-trip form, so
identical results give byte-identical files.
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import pandas as pd

from src.core.errors import FormatError, NotFound
from src.core.training import EpochRecord
from src.models.domain import MetricReport, PredictionSet, SaliencyMap

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
REGRESSION_COLUMNS = ["id", "frame_index", "value"]


def _write(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    return path


# ============================================================================
# PREDICTIONS
# ============================================================================

def prediction_frame(pred: PredictionSet) -> pd.DataFrame:
    ids = sorted(pred.rows)
    if pred.is_classification:
        matrix = np.stack([pred.rows[i] for i in ids]) if ids else np.zeros((0, pred.n_classes))
        frame = pd.DataFrame(matrix, columns=pred.class_names)
        frame.insert(0, "id", ids)
        return frame

    records = []
    for source_id in ids:
        values = pred.rows[source_id]
        index = pred.frame_index[source_id] if pred.frame_index else np.arange(values.size)
        records.extend((source_id, int(i), float(v)) for i, v in zip(index, values))
    return pd.DataFrame.from_records(records, columns=REGRESSION_COLUMNS)


def write_predictions(pred: PredictionSet, path: PathLike) -> Path:
    path = _write(prediction_frame(pred), path)
    logger.info(f"Wrote {len(pred.rows)} prediction row(s) for task {pred.task!r} to {path}")
    return path


def read_predictions(path: PathLike, task: str) -> PredictionSet:
    """
    Read a prediction CSV.

    Raises:
        NotFound: Missing file
        FormatError: Unparseable file, missing id column or posteriors off the simplex
    """
    path = Path(path)
    if not path.exists():
        raise NotFound(f"Prediction file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype={"id": str}, float_precision="round_trip", encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise FormatError(f"Cannot parse prediction file {path}: {e}") from e
    if list(frame.columns[:1]) != ["id"] or len(frame.columns) < 2:
        raise FormatError(f"{path}: header must start with 'id' and name at least one value column")

    try:
        if list(frame.columns) == REGRESSION_COLUMNS:
            rows: Dict[str, np.ndarray] = {}
            index: Dict[str, np.ndarray] = {}
            for source_id, group in frame.groupby("id", sort=True):
                group = group.sort_values("frame_index", kind="stable")
                rows[source_id] = group["value"].to_numpy(dtype=np.float64)
                index[source_id] = group["frame_index"].to_numpy(dtype=np.int64)
            return PredictionSet(task=task, rows=rows, frame_index=index)

        class_names = [str(c) for c in frame.columns[1:]]
        values = frame[frame.columns[1:]].to_numpy(dtype=np.float64)
        ids = frame["id"].tolist()
        if len(set(ids)) != len(ids):
            raise FormatError(f"{path}: duplicate ids")
        return PredictionSet(
            task=task,
            rows={source_id: row for source_id, row in zip(ids, values)},
            class_names=class_names,
        )
    except FormatError:
        raise
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


# ============================================================================
# REPORTS / LOGS
# ============================================================================

def write_metrics(report: MetricReport, path: PathLike) -> Path:
    return _write(pd.DataFrame.from_records(report.as_rows(), columns=["metric", "value"]), path)


def write_saliency(saliency: SaliencyMap, path: PathLike) -> Path:
    bands = len(saliency.per_band)
    centers = saliency.band_centers_hz if saliency.band_centers_hz is not None else np.full(bands, np.nan)
    frame = pd.DataFrame(
        {
            "band_index": np.arange(bands),
            "center_hz": np.asarray(centers, dtype=np.float64),
            "mean_abs_grad": np.asarray(saliency.per_band, dtype=np.float64),
        }
    )
    return _write(frame, path)


def write_training_log(logs: Sequence[Sequence[EpochRecord]], path: PathLike) -> Path:
    """One CSV for all members; `model` is the member index"""
    records: List[tuple] = []
    for member, log in enumerate(logs):
        records.extend((member, r.epoch, r.head, r.loss, r.metric, r.value) for r in log)
    frame = pd.DataFrame.from_records(records, columns=["model", "epoch", "head", "loss", "metric", "value"])
    return _write(frame, path)
