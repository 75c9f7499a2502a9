"""
fuse - soft voting over prediction files

Inputs may come from this toolkit or from external systems writing the same
CSV format. Weights default to equal.
"""

import argparse
import logging
from typing import List

from src.cli.common import flag_overrides, require_path
from src.core.ensemble import soft_vote
from src.core.errors import ConfigError
from src.models.config import RunConfig
from src.storage.prediction_files import read_predictions, write_predictions

logger = logging.getLogger(__name__)


def register(subparsers, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("fuse", parents=[common], help="Fuse prediction CSVs by soft voting")
    parser.add_argument("--inputs", nargs="+", default=[], help="Prediction CSV files (io.inputs)")
    parser.add_argument("--weights", nargs="+", type=float, default=None, help="One weight per input")
    parser.add_argument("--task", default=None, help="Task name (default: the first configured task)")
    parser.add_argument("--out", default=None, help="Fused prediction CSV (io.out)")
    parser.set_defaults(func=run, flag_overrides=config_overrides)


def config_overrides(args) -> List[str]:
    return flag_overrides({"io.inputs": args.inputs, "io.out": args.out})


def run(args, cfg: RunConfig) -> int:
    task = args.task or cfg.task.names[0]
    inputs = cfg.io.inputs
    if not inputs:
        raise ConfigError("fuse needs at least one --inputs file")
    out = require_path(cfg.io.out, "--out")
    weights = args.weights if args.weights is not None else [1.0] * len(inputs)
    if len(weights) != len(inputs):
        raise ConfigError(f"{len(inputs)} inputs but {len(weights)} weights")

    sources = [read_predictions(path, task) for path in inputs]
    fused = soft_vote(sources, weights)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(fused, out)
    logger.info(f"Fused {len(sources)} prediction file(s) with weights {weights} into {out}")
    return 0
