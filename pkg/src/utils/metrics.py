"""
Run metrics (prometheus-client).

Counters live in a private CollectorRegistry so repeated imports in tests
never collide with the default registry. `--metrics-file` dumps it in the
Prometheus text format for node-exporter's textfile collector.
"""

import logging
from pathlib import Path
from typing import Iterable, Union

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

logger = logging.getLogger(__name__)

REGISTRY = CollectorRegistry()

FILES_EXTRACTED = Counter(
    "paraling_files_extracted_total",
    "Audio files turned into feature files",
    ["variant"],
    registry=REGISTRY,
)

EXTRACTION_FAILURES = Counter(
    "paraling_extraction_failures_total",
    "Audio files that failed feature extraction",
    ["error"],
    registry=REGISTRY,
)

MODELS_TRAINED = Counter(
    "paraling_models_trained_total",
    "Ensemble members trained to completion",
    registry=REGISTRY,
)

EPOCHS_TRAINED = Counter(
    "paraling_epochs_trained_total",
    "Training epochs completed across all members",
    registry=REGISTRY,
)

EPOCH_SECONDS = Histogram(
    "paraling_epoch_seconds",
    "Wall time of one training epoch",
    buckets=(0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 60.0, 300.0),
    registry=REGISTRY,
)

PREDICTIONS_WRITTEN = Counter(
    "paraling_prediction_rows_total",
    "Prediction rows written",
    ["task"],
    registry=REGISTRY,
)


def record_training(epoch_seconds: Iterable[float]) -> None:
    """Account one finished member and its epoch timings"""
    MODELS_TRAINED.inc()
    for seconds in epoch_seconds:
        EPOCHS_TRAINED.inc()
        EPOCH_SECONDS.observe(seconds)


def write_metrics_file(path: Union[str, Path]) -> None:
    write_to_textfile(str(path), REGISTRY)
    logger.debug(f"Wrote run metrics to {path}")
