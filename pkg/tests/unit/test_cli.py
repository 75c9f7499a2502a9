"""
Unit tests for the paraling command-line driver.

Tests cover:
- Argument parsing and exit codes for usage, config and data errors
- extract with a corrupt WAV among good ones
- Command flags recorded in config.resolved.txt and rerunning from it
- train -> predict -> evaluate on a small tone corpus
- fuse of hand-written prediction files
- Logging setup and the metrics file
"""

import logging

import pandas as pd
import pytest
from rich.logging import RichHandler

from src.cli.main import build_parser, main
from src.storage.feature_store import read_feature_dir
from src.utils.logging_config import configure_logging
from tests.fixtures.synthetic import tone_corpus

SMALL_RUN = """\
# small and fast
corpus.segment = false
dsp.n_fft = 512
dsp.hop = 256
dsp.n_mels = 8
dsp.lowest_k = 3
net.conv_filters = 4
net.conv_kernel = 2
net.lstm_units = 4
net.ff_units = 4
train.epochs = 2
train.batch_size = 4
ensemble.n_models = 2
"""


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL_RUN, encoding="utf-8")
    return path


@pytest.fixture
def audio_dir(tmp_path):
    directory = tmp_path / "audio"
    tone_corpus(directory)
    return directory


def cli(*args) -> int:
    return main([*map(str, args), "--plain-logs"])


class TestParser:
    """Test argument parsing and exit codes"""

    def test_subcommands_registered(self):
        parser = build_parser()
        for command in ("extract", "train", "predict", "fuse", "saliency", "evaluate"):
            args = parser.parse_args([command, "--out", "x"] + {
                "extract": ["--audio-dir", "a"],
                "train": ["--features", "f", "--labels", "l"],
                "predict": ["--checkpoints", "c", "--features", "f"],
                "fuse": ["--inputs", "p.csv"],
                "saliency": ["--checkpoints", "c", "--features", "f"],
                "evaluate": ["--predictions", "p.csv", "--labels", "l"],
            }[command])
            assert args.command == command

    def test_usage_errors_exit_2(self):
        assert main([]) == 2
        assert main(["train", "--out", "x"]) == 2
        assert main(["nonsense"]) == 2

    def test_config_errors_exit_2(self, audio_dir, tmp_path):
        out = tmp_path / "features"
        assert cli("extract", "--audio-dir", audio_dir, "--out", out, "--set", "train.epochs=0") == 2
        assert cli("extract", "--audio-dir", audio_dir, "--out", out, "--set", "dsp.bogus=1") == 2
        assert cli("extract", "--audio-dir", audio_dir, "--out", out, "--config", tmp_path / "none.cfg") == 2
        assert not out.exists()


class TestExtract:
    """Test feature extraction"""

    def test_corrupt_file_does_not_stop_the_run(self, audio_dir, run_config, tmp_path):
        (audio_dir / "broken.wav").write_bytes(b"RIFF garbage")
        out = tmp_path / "features"
        assert cli("extract", "--config", run_config, "--audio-dir", audio_dir, "--out", out) == 1
        features = read_feature_dir(out)
        assert sorted(features) == [f"clip{i:02d}" for i in range(6)]
        assert (out / "config.resolved.txt").exists()
        assert features["clip00"].n_bands == 8

    def test_lowest_k(self, audio_dir, run_config, tmp_path):
        out = tmp_path / "features"
        assert cli("extract", "--config", run_config, "--audio-dir", audio_dir, "--out", out, "--lowest-k") == 0
        assert read_feature_dir(out)["clip01"].n_bands == 3

    def test_segments_named_by_parent(self, audio_dir, run_config, tmp_path):
        out = tmp_path / "features"
        code = cli(
            "extract", "--config", run_config, "--audio-dir", audio_dir, "--out", out,
            "--set", "corpus.segment=true", "--set", "corpus.window_s=0.25", "--set", "corpus.hop_s=0.25",
        )
        assert code == 0
        assert sorted(read_feature_dir(out))[:2] == ["clip00@0", "clip00@1"]

    def test_missing_audio_dir(self, run_config, tmp_path):
        assert cli("extract", "--config", run_config, "--audio-dir", tmp_path / "none", "--out", tmp_path / "o") == 1

    def test_variant_and_paths_in_config_dump(self, audio_dir, run_config, tmp_path):
        plain, low_freq = tmp_path / "plain", tmp_path / "low_freq"
        assert cli("extract", "--config", run_config, "--audio-dir", audio_dir, "--out", plain) == 0
        assert cli("extract", "--config", run_config, "--audio-dir", audio_dir, "--out", low_freq, "--low-freq") == 0
        plain_dump = (plain / "config.resolved.txt").read_text()
        low_freq_dump = (low_freq / "config.resolved.txt").read_text()
        assert plain_dump != low_freq_dump
        assert "extract.variant = plain\n" in plain_dump
        assert "extract.variant = low_freq\n" in low_freq_dump
        assert "io.audio_dir = ../audio\n" in plain_dump
        assert "io.out = .\n" in plain_dump

    def test_config_dump_reproduces_run(self, audio_dir, run_config, tmp_path):
        first, second = tmp_path / "first", tmp_path / "second"
        assert cli("extract", "--config", run_config, "--audio-dir", audio_dir, "--out", first, "--low-freq") == 0
        assert cli("extract", "--config", first / "config.resolved.txt", "--out", second) == 0
        first_files = {p.name: p.read_bytes() for p in first.iterdir()}
        second_files = {p.name: p.read_bytes() for p in second.iterdir()}
        assert first_files == second_files
        assert read_feature_dir(second)["clip00"].n_bands == 3

    def test_missing_out_is_a_config_error(self, audio_dir):
        assert cli("extract", "--audio-dir", audio_dir) == 2


class TestTrainPredictEvaluate:
    """Test the training and scoring subcommands end to end"""

    def test_pipeline(self, audio_dir, run_config, tmp_path):
        features, models, preds = tmp_path / "features", tmp_path / "models", tmp_path / "preds"
        labels = audio_dir / "labels.csv"
        assert cli("extract", "--config", run_config, "--audio-dir", audio_dir, "--out", features) == 0
        assert cli("train", "--config", run_config, "--features", features, "--labels", labels, "--out", models) == 0
        assert sorted(p.name for p in models.glob("*.plmp")) == ["model_000.plmp", "model_001.plmp"]

        log = pd.read_csv(models / "training_log.csv")
        assert log["model"].tolist() == [0, 0, 1, 1]
        assert log["metric"].unique().tolist() == ["uar"]

        code = cli(
            "predict", "--config", run_config, "--checkpoints", models, "--features", features,
            "--out", preds, "--per-model",
        )
        assert code == 0
        fused = pd.read_csv(preds / "label.csv")
        assert list(fused.columns) == ["id", "neg", "pos"]
        assert len(fused) == 6
        assert (preds / "label.model_001.csv").exists()

        metrics = tmp_path / "metrics.csv"
        code = cli(
            "evaluate", "--config", run_config, "--predictions", preds / "label.csv", "--labels", labels,
            "--out", metrics, "--members", preds,
        )
        assert code == 0
        assert pd.read_csv(metrics)["metric"].iloc[0] == "uar"

    def test_saliency(self, audio_dir, run_config, tmp_path):
        features, models, out = tmp_path / "features", tmp_path / "models", tmp_path / "saliency"
        labels = audio_dir / "labels.csv"
        assert cli("extract", "--config", run_config, "--audio-dir", audio_dir, "--out", features) == 0
        assert cli("train", "--config", run_config, "--features", features, "--labels", labels, "--out", models) == 0
        code = cli(
            "saliency", "--config", run_config, "--checkpoints", models, "--features", features,
            "--out", out, "--file", "clip03",
        )
        assert code == 0
        table = pd.read_csv(out / "saliency.model_000.csv")
        assert list(table.columns) == ["band_index", "center_hz", "mean_abs_grad"]
        assert len(table) == 8
        assert (out / "clip03.model_001.saliency.plfb").exists()
        assert cli(
            "saliency", "--config", run_config, "--checkpoints", models, "--features", features,
            "--out", out, "--file", "nobody",
        ) == 1

    def test_mismatched_labels_flags(self, run_config, tmp_path):
        code = cli(
            "train", "--config", run_config, "--features", tmp_path, "--features", tmp_path,
            "--labels", tmp_path / "l.csv", "--out", tmp_path / "m",
        )
        assert code == 2


class TestFuse:
    """Test fusion and scoring of prediction files"""

    def test_equal_weight_fusion(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        a.write_text("id,neg,pos\nx,0.6,0.4\n")
        b.write_text("id,neg,pos\nx,0.2,0.8\n")
        out = tmp_path / "fused.csv"
        assert cli("fuse", "--inputs", a, b, "--out", out) == 0
        fused = pd.read_csv(out)
        assert list(fused.columns) == ["id", "neg", "pos"]
        assert fused.loc[0, "neg"] == pytest.approx(0.4)
        assert fused.loc[0, "pos"] == pytest.approx(0.6)

    def test_weight_count_mismatch(self, tmp_path):
        a = tmp_path / "a.csv"
        a.write_text("id,neg,pos\nx,0.6,0.4\n")
        assert cli("fuse", "--inputs", a, a, "--weights", "1", "--out", tmp_path / "f.csv") == 2

    def test_misaligned_inputs(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        a.write_text("id,neg,pos\nx,0.6,0.4\n")
        b.write_text("id,neg,pos\ny,0.2,0.8\n")
        assert cli("fuse", "--inputs", a, b, "--out", tmp_path / "f.csv") == 1

    def test_missing_prediction_on_evaluate(self, tmp_path):
        pred = tmp_path / "p.csv"
        pred.write_text("id,neg,pos\nx,0.6,0.4\n")
        labels = tmp_path / "labels.csv"
        labels.write_text("id,label\nx,neg\ny,pos\n")
        assert cli("evaluate", "--predictions", pred, "--labels", labels) == 1


class TestAmbient:
    """Test logging setup and run metrics"""

    def test_plain_logging(self):
        configure_logging("debug", use_rich=False)
        root = logging.getLogger()
        assert root.level == logging.DEBUG
        assert len(root.handlers) == 1
        assert not isinstance(root.handlers[0], RichHandler)

    def test_rich_logging(self):
        configure_logging(logging.WARNING)
        root = logging.getLogger()
        assert isinstance(root.handlers[0], RichHandler)
        assert root.level == logging.WARNING

    def test_metrics_file(self, audio_dir, run_config, tmp_path):
        metrics = tmp_path / "run.prom"
        code = cli(
            "extract", "--config", run_config, "--audio-dir", audio_dir, "--out", tmp_path / "f",
            "--metrics-file", metrics,
        )
        assert code == 0
        text = metrics.read_text()
        assert 'paraling_files_extracted_total{variant="plain"}' in text
