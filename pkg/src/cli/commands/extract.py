"""
extract - WAV files to PLFB feature files

One feature file per WAV (one per segment when corpus.segment is on, named
`<id>@<k>.plfb`). Feature variants (extract.variant):

- --preprocess: preemphasis + Butterworth low-pass before the spectrogram
- --lowest-k: keep only the dsp.lowest_k lowest Mel bands
- --low-freq: both of the above
"""

import argparse
import logging
from typing import List, Optional

from src.cli.common import ensure_dir, flag_overrides, require_path, write_config_dump
from src.core import corpus, dsp
from src.core.errors import DataError, NotFound
from src.models.config import RunConfig
from src.models.domain import AudioClip, MelSpectrogram
from src.storage.feature_store import SUFFIX, write_features
from src.utils.metrics import EXTRACTION_FAILURES, FILES_EXTRACTED

logger = logging.getLogger(__name__)


def register(subparsers, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("extract", parents=[common], help="Extract feature files from WAV audio")
    parser.add_argument("--audio-dir", default=None, help="Directory of PCM16 mono WAV files (io.audio_dir)")
    parser.add_argument("--out", default=None, help="Output directory for .plfb files (io.out)")
    parser.add_argument("--low-freq", action="store_true", help="Preprocess and keep the lowest dsp.lowest_k bands")
    parser.add_argument("--preprocess", action="store_true", help="Preemphasis + Butterworth low-pass only")
    parser.add_argument("--lowest-k", action="store_true", help="Keep the lowest dsp.lowest_k bands only")
    parser.set_defaults(func=run, flag_overrides=config_overrides)


def _variant(args) -> Optional[str]:
    if args.low_freq or (args.preprocess and args.lowest_k):
        return "low_freq"
    if args.preprocess:
        return "preprocess"
    if args.lowest_k:
        return "lowest_k"
    return None


def config_overrides(args) -> List[str]:
    return flag_overrides({
        "io.audio_dir": args.audio_dir,
        "io.out": args.out,
        "extract.variant": _variant(args),
    })


def features_for_clip(clip: AudioClip, cfg: RunConfig) -> List[MelSpectrogram]:
    """Feature matrices of one clip (several when segmenting)"""
    if cfg.extract.preprocess:
        clip = dsp.preprocess_low_freq(clip, cfg.dsp)
    if cfg.corpus.segment:
        clips = [s.clip for s in corpus.segment(clip, cfg.corpus.window_s, cfg.corpus.hop_s, cfg.corpus.pad_last)]
    else:
        clips = [clip]

    specs = []
    for part in clips:
        spec = dsp.extract_features(part, cfg.dsp)
        if cfg.extract.lowest_k:
            spec = dsp.lowest_k_bands(spec, cfg.dsp.lowest_k)
        specs.append(spec)
    return specs


def run(args, cfg: RunConfig) -> int:
    audio_dir = require_path(cfg.io.audio_dir, "--audio-dir")
    out = require_path(cfg.io.out, "--out")
    if not audio_dir.is_dir():
        raise NotFound(f"Audio directory not found: {audio_dir}")
    variant = cfg.extract.variant

    out_dir = ensure_dir(out)
    write_config_dump(cfg, out_dir)
    wavs = sorted(p for p in audio_dir.iterdir() if p.suffix.lower() == ".wav")
    logger.info(f"Extracting {variant} features from {len(wavs)} WAV file(s) in {audio_dir}")

    failures = 0
    for wav in wavs:
        try:
            clip = corpus.load_wav(wav)
            for spec in features_for_clip(clip, cfg):
                write_features(spec, out_dir / f"{spec.source_id}{SUFFIX}")
            FILES_EXTRACTED.labels(variant=variant).inc()
        except DataError as e:
            failures += 1
            EXTRACTION_FAILURES.labels(error=type(e).__name__).inc()
            logger.error(f"{wav.name}: {e}")

    logger.info(f"Extracted {len(wavs) - failures}/{len(wavs)} file(s) to {out_dir}")
    return 1 if failures else 0
