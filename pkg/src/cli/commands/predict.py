"""
predict - ensemble predictions for a feature directory

Writes `<task>.csv` (member average) per head and, with --per-model,
`<task>.model_<i>.csv` for every member.
"""

import argparse
import logging
from typing import Dict, List

from src.cli.common import class_names_for, ensure_dir, flag_overrides, require_path, single_path, write_config_dump
from src.core.ensemble import average_predictions, predict_model
from src.core.errors import NoExamples, ShapeMismatch
from src.models.config import RunConfig
from src.models.domain import PredictionSet
from src.storage.checkpoint_store import read_checkpoints
from src.storage.feature_store import read_feature_dir
from src.storage.prediction_files import write_predictions
from src.utils.metrics import PREDICTIONS_WRITTEN

logger = logging.getLogger(__name__)


def register(subparsers, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("predict", parents=[common], help="Predict with a trained ensemble")
    parser.add_argument("--checkpoints", default=None, help="Checkpoint directory or a single .plmp file (io.checkpoints)")
    parser.add_argument("--features", default=None, help="Feature directory (io.features)")
    parser.add_argument("--out", default=None, help="Output directory for prediction CSVs (io.out)")
    parser.add_argument("--per-model", action="store_true", help="Also write each member's predictions (io.per_model)")
    parser.set_defaults(func=run, flag_overrides=config_overrides)


def config_overrides(args) -> List[str]:
    return flag_overrides({
        "io.checkpoints": args.checkpoints,
        "io.features": args.features,
        "io.out": args.out,
        "io.per_model": args.per_model,
    })


def member_file(task: str, index: int) -> str:
    return f"{task}.model_{index:03d}.csv"


def run(args, cfg: RunConfig) -> int:
    checkpoints = require_path(cfg.io.checkpoints, "--checkpoints")
    feature_dir = single_path(cfg.io.features, "--features")
    out = require_path(cfg.io.out, "--out")
    models = read_checkpoints(checkpoints)
    features = read_feature_dir(feature_dir)
    if not features:
        raise NoExamples(f"No feature files in {feature_dir}")
    arch = models[0].arch
    for params in models[1:]:
        if params.arch != arch:
            raise ShapeMismatch("Checkpoints in one ensemble must share an architecture")

    out_dir = ensure_dir(out)
    write_config_dump(cfg, out_dir)
    names = class_names_for(cfg, models[0])
    per_task: Dict[str, List[PredictionSet]] = {head.name: [] for head in arch.heads}
    for params in models:
        for task, pred in predict_model(params, features, names).items():
            per_task[task].append(pred)

    for task, members in per_task.items():
        fused = average_predictions(members)
        write_predictions(fused, out_dir / f"{task}.csv")
        PREDICTIONS_WRITTEN.labels(task=task).inc(len(fused.rows))
        if cfg.io.per_model:
            for i, member in enumerate(members):
                write_predictions(member, out_dir / member_file(task, i))

    logger.info(f"Predicted {len(features)} feature file(s) with {len(models)} model(s)")
    return 0
