"""
End-to-end test of the paraling command-line pipeline.

extract -> train (2 models) -> predict -> fuse (with an external prediction
file) -> evaluate, run three times: twice in-process and once with two
worker processes. Every file the runs write must be byte-identical.
"""

from pathlib import Path
from typing import Dict

import pandas as pd

from src.cli.main import main
from tests.fixtures.synthetic import tone_corpus

RUN_CONFIG = """\
corpus.segment = true
corpus.window_s = 0.25
corpus.hop_s = 0.25
dsp.n_fft = 512
dsp.hop = 256
dsp.n_mels = 8
net.conv_filters = 4
net.conv_kernel = 2
net.lstm_units = 4
net.ff_units = 4
train.epochs = 3
train.batch_size = 4
ensemble.n_models = 2
ensemble.base_seed = 7
"""


def run_pipeline(root: Path, workers: int) -> None:
    root.mkdir()
    labels = tone_corpus(root / "audio")
    config = root / "run.cfg"
    config.write_text(RUN_CONFIG, encoding="utf-8")
    external = root / "external.csv"
    rows = [f"{source_id},{0.7 if name == 'neg' else 0.2},{0.3 if name == 'neg' else 0.8}"
            for source_id, name in sorted(labels.items())]
    external.write_text("\n".join(["id,neg,pos", *rows]) + "\n", encoding="utf-8")

    def cli(*args) -> int:
        return main([*map(str, args), "--config", str(config), "--plain-logs"])

    assert cli("extract", "--audio-dir", root / "audio", "--out", root / "features") == 0
    assert cli(
        "train", "--features", root / "features", "--labels", root / "audio" / "labels.csv",
        "--out", root / "models", "--workers", workers,
    ) == 0
    assert cli("predict", "--checkpoints", root / "models", "--features", root / "features", "--out", root / "preds") == 0
    assert cli("fuse", "--inputs", root / "preds" / "label.csv", external, "--out", root / "fused.csv") == 0
    assert cli(
        "evaluate", "--predictions", root / "fused.csv", "--labels", root / "audio" / "labels.csv",
        "--out", root / "metrics.csv",
    ) == 0


def file_bytes(root: Path) -> Dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestCliPipeline:
    """Test the full pipeline and its reproducibility"""

    def test_byte_identical_reruns(self, tmp_path):
        run_pipeline(tmp_path / "first", workers=1)
        run_pipeline(tmp_path / "second", workers=1)
        run_pipeline(tmp_path / "parallel", workers=2)

        first = file_bytes(tmp_path / "first")
        assert "models/model_001.plmp" in first
        assert "preds/label.csv" in first
        assert first == file_bytes(tmp_path / "second")
        assert first == file_bytes(tmp_path / "parallel")

    def test_outputs(self, tmp_path):
        run_pipeline(tmp_path / "run", workers=1)
        root = tmp_path / "run"
        fused = pd.read_csv(root / "fused.csv")
        assert fused["id"].tolist() == [f"clip{i:02d}" for i in range(6)]
        assert (fused[["neg", "pos"]].sum(axis=1) - 1.0).abs().max() < 1e-9
        metrics = pd.read_csv(root / "metrics.csv")
        assert metrics["metric"].iloc[0] == "uar"
        assert 0.0 <= metrics["value"].iloc[0] <= 1.0
        assert "ensemble.base_seed = 7" in (root / "models" / "config.resolved.txt").read_text()
