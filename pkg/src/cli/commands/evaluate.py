"""
evaluate - score a prediction CSV against a label CSV

Prints a metric table and writes metric,value rows to --out. With --members
DIR the per-model files `<task>.model_<i>.csv` in DIR are scored too and the
member/average/best/ensemble comparison is reported.
"""

import argparse
import logging
from pathlib import Path
from typing import List, Tuple

from rich.console import Console
from rich.table import Table

from src.cli.common import flag_overrides, label_schema, require_path, single_path
from src.core import corpus
from src.core.ensemble import MemberSummary, evaluate, member_summary
from src.core.errors import NoExamples
from src.models.config import RunConfig
from src.models.domain import PredictionSet
from src.storage.prediction_files import read_predictions, write_metrics

logger = logging.getLogger(__name__)


def register(subparsers, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("evaluate", parents=[common], help="Score predictions against labels")
    parser.add_argument("--predictions", default=None, help="Prediction CSV (io.predictions)")
    parser.add_argument("--labels", default=None, help="Label CSV (io.labels)")
    parser.add_argument("--task", default=None, help="Task name (default: the first configured task)")
    parser.add_argument("--out", default=None, help="Metric CSV to write (io.out)")
    parser.add_argument("--members", default=None, help="Directory of per-model prediction CSVs (io.members)")
    parser.set_defaults(func=run, flag_overrides=config_overrides)


def config_overrides(args) -> List[str]:
    return flag_overrides({
        "io.predictions": args.predictions,
        "io.labels": args.labels,
        "io.out": args.out,
        "io.members": args.members,
    })


def _member_files(directory: Path, task: str) -> List[Path]:
    files = sorted(directory.glob(f"{task}.model_*.csv"))
    if not files:
        raise NoExamples(f"No per-model predictions for task {task!r} in {directory}")
    return files


def _metric_table(title: str, rows: List[Tuple[str, float]]) -> Table:
    table = Table(title=title, show_header=True, header_style="bold cyan")
    table.add_column("Metric", style="cyan")
    table.add_column("Value", justify="right")
    for name, value in rows:
        table.add_row(name, f"{value:.6g}")
    return table


def _summary_table(summary: MemberSummary) -> Table:
    table = Table(title=f"Members ({summary.metric})", show_header=True, header_style="bold cyan")
    table.add_column("Model", style="cyan")
    table.add_column(summary.metric, justify="right")
    for i, score in enumerate(summary.member_scores):
        style = "green" if i == summary.best_member else ""
        table.add_row(f"model_{i:03d}", f"[{style}]{score:.6g}[/{style}]" if style else f"{score:.6g}")
    table.add_row("average", f"{summary.average:.6g}")
    table.add_row("best", f"{summary.best:.6g}")
    table.add_row("ensemble", f"{summary.ensemble:.6g}")
    return table


def run(args, cfg: RunConfig) -> int:
    task = args.task or cfg.task.names[0]
    predictions = require_path(cfg.io.predictions, "--predictions")
    labels = corpus.load_labels(single_path(cfg.io.labels, "--labels"), label_schema(cfg))
    frame_rate = cfg.dsp.feature_frame_rate_hz
    pred = read_predictions(predictions, task)
    report = evaluate(pred, labels, frame_rate)

    console = Console()
    console.print(_metric_table(f"Evaluation: {task}", report.as_rows()))
    if cfg.io.out:
        out = Path(cfg.io.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_metrics(report, out)

    if cfg.io.members:
        members: List[PredictionSet] = [read_predictions(p, task) for p in _member_files(Path(cfg.io.members), task)]
        summary = member_summary(members, labels, frame_rate)
        console.print(_summary_table(summary))
        logger.info(
            f"{len(members)} member(s): average {summary.metric} {summary.average:.4f}, "
            f"best {summary.best:.4f} (model_{summary.best_member:03d}), ensemble {summary.ensemble:.4f}"
        )
    return 0
