"""
saliency - per-band input-gradient importance for every checkpoint

Writes `saliency.model_<i>.csv` per model; with --file ID (saliency.file) also
the per-cell map of that feature file as `<ID>.model_<i>.saliency.plfb`.
"""

import argparse
import logging
from typing import List

from src.cli.common import ensure_dir, flag_overrides, require_path, single_path, write_config_dump
from src.core.errors import MissingPrediction, NoExamples
from src.core.saliency import band_importance
from src.models.config import RunConfig
from src.models.domain import MelSpectrogram
from src.storage.checkpoint_store import read_checkpoints
from src.storage.feature_store import read_feature_dir, write_features
from src.storage.prediction_files import write_saliency

logger = logging.getLogger(__name__)


def register(subparsers, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("saliency", parents=[common], help="Band importance from input gradients")
    parser.add_argument("--checkpoints", default=None, help="Checkpoint directory or a single .plmp file (io.checkpoints)")
    parser.add_argument("--features", default=None, help="Feature directory (io.features)")
    parser.add_argument("--out", default=None, help="Output directory (io.out)")
    parser.add_argument("--head", default=None, help="Head to explain (saliency.head; default: first head)")
    parser.add_argument(
        "--class-index", type=int, default=None, help="Class to explain (saliency.class_index; default: argmax)"
    )
    parser.add_argument("--file", default=None, help="Feature id whose full per-cell map is written (saliency.file)")
    parser.set_defaults(func=run, flag_overrides=config_overrides)


def config_overrides(args) -> List[str]:
    return flag_overrides({
        "io.checkpoints": args.checkpoints,
        "io.features": args.features,
        "io.out": args.out,
        "saliency.head": args.head,
        "saliency.class_index": args.class_index,
        "saliency.file": args.file,
    })


def run(args, cfg: RunConfig) -> int:
    checkpoints = require_path(cfg.io.checkpoints, "--checkpoints")
    feature_dir = single_path(cfg.io.features, "--features")
    out = require_path(cfg.io.out, "--out")
    explained = cfg.saliency.file
    models = read_checkpoints(checkpoints)
    features = read_feature_dir(feature_dir)
    if not features:
        raise NoExamples(f"No feature files in {feature_dir}")
    ids = sorted(features)
    single = None
    if explained is not None:
        if explained not in features:
            raise MissingPrediction(f"Feature id {explained!r} not found in {feature_dir}")
        single = ids.index(explained)

    out_dir = ensure_dir(out)
    write_config_dump(cfg, out_dir)
    maps = band_importance(
        models,
        [features[i] for i in ids],
        head=cfg.saliency.head,
        class_index=cfg.saliency.class_index,
        target=cfg.saliency.target,
        absolute=cfg.saliency.absolute,
        single_file=single,
    )
    for m, saliency_map in enumerate(maps):
        write_saliency(saliency_map, out_dir / f"saliency.model_{m:03d}.csv")
        if saliency_map.per_cell is not None:
            source = features[explained]
            cell_map = MelSpectrogram(
                values=saliency_map.per_cell,
                frame_rate_hz=source.frame_rate_hz,
                band_centers_hz=source.band_centers_hz,
                source_id=explained,
            )
            write_features(cell_map, out_dir / f"{explained}.model_{m:03d}.saliency.plfb")

    logger.info(f"Wrote saliency for {len(maps)} model(s) over {len(ids)} file(s) to {out_dir}")
    return 0
