"""
train - fit an ensemble on one or more (features, labels) pairs

Writes model_<i>.plmp checkpoints, training_log.csv and config.resolved.txt
to the output directory. Checkpoints already written are removed again if the
run aborts.
"""

import argparse
import logging
from pathlib import Path
from typing import Dict, List

from src.cli.common import ensure_dir, flag_overrides, label_schema, require_path, write_config_dump
from src.core import corpus
from src.core.ensemble import train_members
from src.core.errors import ConfigError, DuplicateId, NoExamples, ShapeMismatch
from src.models.config import RunConfig
from src.models.domain import LabeledExample, MelSpectrogram
from src.storage.checkpoint_store import SUFFIX, checkpoint_name, write_checkpoint
from src.storage.feature_store import read_feature_dir
from src.storage.prediction_files import write_training_log
from src.utils.metrics import record_training

logger = logging.getLogger(__name__)

TRAINING_LOG = "training_log.csv"


def register(subparsers, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("train", parents=[common], help="Train an ensemble of networks")
    parser.add_argument(
        "--features", action="append", default=[], help="Feature directory (repeat to train on a union; io.features)"
    )
    parser.add_argument("--labels", action="append", default=[], help="Label CSV paired with each --features (io.labels)")
    parser.add_argument("--out", default=None, help="Output directory for checkpoints and logs (io.out)")
    parser.add_argument("--workers", type=int, default=None, help="Parallel member processes (ensemble.workers)")
    parser.set_defaults(func=run, flag_overrides=config_overrides)


def config_overrides(args) -> List[str]:
    # --workers is scheduling only and is not a config key
    return flag_overrides({"io.features": args.features, "io.labels": args.labels, "io.out": args.out})


def load_training_sets(cfg: RunConfig, feature_dirs: List[str], label_files: List[str]):
    """
    Read and join every (features, labels) pair.

    Returns:
        (examples, input_bands)
    """
    if not feature_dirs:
        raise ConfigError("train needs at least one --features/--labels pair")
    if len(feature_dirs) != len(label_files):
        raise ConfigError(f"{len(feature_dirs)} --features but {len(label_files)} --labels")

    schema = label_schema(cfg)
    merged: Dict[str, MelSpectrogram] = {}
    pairs = []
    for feature_dir, label_file in zip(feature_dirs, label_files):
        features = read_feature_dir(feature_dir)
        clash = set(features) & set(merged)
        if clash:
            raise DuplicateId(f"Feature ids appear in more than one training set: {sorted(clash)[:5]}")
        merged.update(features)
        pairs.append((features, corpus.load_labels(label_file, schema)))

    if not merged:
        raise NoExamples("No feature files found in the training sets")
    bands = {spec.n_bands for spec in merged.values()}
    if len(bands) != 1:
        raise ShapeMismatch(f"Feature files disagree on band count: {sorted(bands)}")
    input_bands = bands.pop()

    arch = cfg.architecture(input_bands)
    examples: List[LabeledExample] = []
    for features, table in pairs:
        examples.extend(corpus.build_examples(features, table, arch))
    if not examples:
        raise NoExamples("No feature file has a label row")
    return examples, input_bands


def run(args, cfg: RunConfig) -> int:
    out = require_path(cfg.io.out, "--out")
    examples, input_bands = load_training_sets(cfg, cfg.io.features, cfg.io.labels)
    spec = cfg.ensemble_spec(input_bands)
    out_dir = ensure_dir(out)
    for stale in out_dir.glob(f"model_*{SUFFIX}"):
        stale.unlink()
    write_config_dump(cfg, out_dir)

    workers = args.workers if args.workers is not None else cfg.ensemble.workers
    results = train_members(spec, examples, workers)
    written: List[Path] = []
    try:
        for i, result in enumerate(results):
            written.append(write_checkpoint(result.params, out_dir / checkpoint_name(i)))
            record_training(result.epoch_seconds)
        write_training_log([r.log for r in results], out_dir / TRAINING_LOG)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise

    logger.info(f"Wrote {len(written)} checkpoint(s) to {out_dir}")
    return 0
