"""
Spectral Feature Extraction

- Log-Mel spectrograms (HTK Mel scale, triangular filters without area
  normalization, natural log with an energy floor)
- Low-frequency preprocessing: preemphasis followed by a causal Butterworth
  low-pass realized as second-order sections
- Lowest-k band selection
- Raw-audio framing for the waveform input path

DFT convention: X[k] = sum_n x[n] exp(-2j*pi*k*n/N), unnormalized. With the
one-sided power spectrum P[k] = |X[k]|^2 for k = 0..N/2, the frame energy is
(P[0] + P[N/2] + 2 * sum_{k=1}^{N/2-1} P[k]) / N (see frame_energy).
"""

import logging
from functools import lru_cache

import librosa
import numpy as np
from scipy import signal

from src.core.errors import (
    ClipTooShort,
    CutoffOutOfRange,
    EmptyClip,
    KOutOfRange,
    SampleRateMismatch,
    TooManyFilters,
)
from src.models.config import DspConfig
from src.models.domain import AudioClip, FilterBank, MelSpectrogram

logger = logging.getLogger(__name__)

WINDOWS = {"hann": "hann", "rectangular": "boxcar"}


# ============================================================================
# MEL SCALE
# ============================================================================

def hz_to_mel(f_hz):
    """HTK Mel scale: 2595 * log10(1 + f / 700)"""
    return librosa.hz_to_mel(f_hz, htk=True)


def mel_to_hz(mel):
    return librosa.mel_to_hz(mel, htk=True)


def mel_filterbank(config: DspConfig, sample_rate_hz: int) -> FilterBank:
    """
    Build n_mels triangular filters equally spaced on the Mel scale.

    Filter i rises from center(i-1) to a peak of 1 at center(i) and falls to
    center(i+1); the outer edges are anchored at fmin and fmax.

    Raises:
        TooManyFilters: Adjacent centers closer than one FFT bin
    """
    return _cached_filterbank(
        config.n_fft, config.n_mels, config.fmin_hz, config.resolved_fmax(), sample_rate_hz
    )


@lru_cache(maxsize=16)
def _cached_filterbank(n_fft: int, n_mels: int, fmin: float, fmax: float, sample_rate_hz: int) -> FilterBank:
    edges_hz = librosa.mel_frequencies(n_mels=n_mels + 2, fmin=fmin, fmax=fmax, htk=True)
    bin_width_hz = sample_rate_hz / n_fft
    spacing_bins = np.diff(edges_hz) / bin_width_hz
    if np.any(spacing_bins < 1.0):
        worst = int(np.argmin(spacing_bins))
        raise TooManyFilters(
            f"{n_mels} Mel filters need n_fft > {n_fft}: centers near {edges_hz[worst]:.1f} Hz "
            f"are {spacing_bins[worst]:.2f} bins apart"
        )

    weights = librosa.filters.mel(
        sr=sample_rate_hz,
        n_fft=n_fft,
        n_mels=n_mels,
        fmin=fmin,
        fmax=fmax,
        htk=True,
        norm=None,
        dtype=np.float64,
    )
    weights.setflags(write=False)
    centers = edges_hz[1:-1].copy()
    centers.setflags(write=False)
    logger.debug(f"Built Mel filterbank: {n_mels} filters, n_fft={n_fft}, sr={sample_rate_hz}")
    return FilterBank(weights=weights, centers_hz=centers)


# ============================================================================
# SPECTROGRAMS
# ============================================================================

def power_spectrogram(samples: np.ndarray, config: DspConfig) -> np.ndarray:
    """
    One-sided power spectra of windowed frames, shape (frames, n_fft/2 + 1).

    Frames start at multiples of hop without centering, so there are
    1 + (len - n_fft) // hop of them.
    """
    stft = librosa.stft(
        np.asarray(samples, dtype=np.float64),
        n_fft=config.n_fft,
        hop_length=config.hop,
        win_length=config.n_fft,
        window=WINDOWS[config.window_fn],
        center=False,
    )
    return (np.abs(stft) ** 2).T


def frame_energy(power: np.ndarray, n_fft: int) -> np.ndarray:
    """Time-domain energy of each windowed frame from its one-sided power spectrum"""
    power = np.atleast_2d(power)
    weights = np.full(power.shape[-1], 2.0)
    weights[0] = 1.0
    if n_fft % 2 == 0:
        weights[-1] = 1.0
    return power @ weights / n_fft


def analysis_window(config: DspConfig) -> np.ndarray:
    return librosa.filters.get_window(WINDOWS[config.window_fn], config.n_fft, fftbins=True)


def mel_spectrogram(clip: AudioClip, config: DspConfig) -> MelSpectrogram:
    """
    Log-Mel spectrogram: log(max(log_floor, filterbank . power_spectrum)).

    Raises:
        SampleRateMismatch: Clip rate differs from config.sample_rate_hz
        ClipTooShort: Fewer samples than n_fft
    """
    if clip.sample_rate_hz != config.sample_rate_hz:
        raise SampleRateMismatch(
            f"{clip.source_id}: sample rate {clip.sample_rate_hz} Hz, expected {config.sample_rate_hz} Hz"
        )
    if len(clip.samples) < config.n_fft:
        raise ClipTooShort(
            f"{clip.source_id}: {len(clip.samples)} samples is shorter than n_fft={config.n_fft}"
        )

    bank = mel_filterbank(config, clip.sample_rate_hz)
    power = power_spectrogram(clip.samples, config)
    energies = power @ bank.weights.T
    values = np.log(np.maximum(config.log_floor, energies))
    return MelSpectrogram(
        values=values,
        frame_rate_hz=clip.sample_rate_hz / config.hop,
        band_centers_hz=bank.centers_hz,
        source_id=clip.source_id,
    )


def lowest_k_bands(spec: MelSpectrogram, k: int) -> MelSpectrogram:
    """Keep bands 0..k-1 and their centers"""
    if not (1 <= k <= spec.n_bands):
        raise KOutOfRange(f"k={k} outside [1, {spec.n_bands}]")
    return MelSpectrogram(
        values=spec.values[:, :k].copy(),
        frame_rate_hz=spec.frame_rate_hz,
        band_centers_hz=spec.band_centers_hz[:k].copy(),
        source_id=spec.source_id,
    )


def raw_frames(clip: AudioClip, config: DspConfig) -> MelSpectrogram:
    """
    Frame raw audio into non-overlapping `raw_frame`-sample rows.

    The trailing partial frame is dropped; band centers are the sample offsets
    within a frame.
    """
    if clip.sample_rate_hz != config.sample_rate_hz:
        raise SampleRateMismatch(
            f"{clip.source_id}: sample rate {clip.sample_rate_hz} Hz, expected {config.sample_rate_hz} Hz"
        )
    n_frames = len(clip.samples) // config.raw_frame
    if n_frames == 0:
        raise ClipTooShort(f"{clip.source_id}: shorter than one raw frame of {config.raw_frame} samples")
    values = clip.samples[: n_frames * config.raw_frame].reshape(n_frames, config.raw_frame)
    return MelSpectrogram(
        values=values,
        frame_rate_hz=clip.sample_rate_hz / config.raw_frame,
        band_centers_hz=np.arange(config.raw_frame, dtype=np.float64),
        source_id=clip.source_id,
    )


def extract_features(clip: AudioClip, config: DspConfig) -> MelSpectrogram:
    """Feature matrix for the configured input path (mel or raw)"""
    if config.input == "raw":
        return raw_frames(clip, config)
    return mel_spectrogram(clip, config)


# ============================================================================
# LOW-FREQUENCY PREPROCESSING
# ============================================================================

def preemphasize(samples: np.ndarray, h: float) -> np.ndarray:
    """y[0] = x[0]; y[n] = x[n] - h * x[n-1]"""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise EmptyClip("Cannot preemphasize an empty signal")
    return signal.lfilter([1.0, -h], [1.0], samples)


def butterworth_sos(order: int, cutoff_hz: float, sample_rate_hz: int) -> np.ndarray:
    """
    Low-pass Butterworth second-order sections.

    Designed from the analog prototype through the bilinear transform with the
    cutoff prewarped, so |H| is exactly 1/sqrt(2) at cutoff_hz.

    Raises:
        CutoffOutOfRange: Unless 0 < cutoff_hz < sample_rate_hz / 2
    """
    if not (0.0 < cutoff_hz < sample_rate_hz / 2.0):
        raise CutoffOutOfRange(
            f"Cutoff {cutoff_hz} Hz outside (0, {sample_rate_hz / 2.0}) for sample rate {sample_rate_hz}"
        )
    if order < 1:
        raise CutoffOutOfRange(f"Filter order must be >= 1, got {order}")
    return signal.butter(order, cutoff_hz, btype="lowpass", output="sos", fs=sample_rate_hz)


def butterworth_lowpass(samples: np.ndarray, order: int, cutoff_hz: float, sample_rate_hz: int) -> np.ndarray:
    """Causal single-pass Butterworth low-pass with zero initial state"""
    sos = butterworth_sos(order, cutoff_hz, sample_rate_hz)
    return signal.sosfilt(sos, np.asarray(samples, dtype=np.float64))


def preprocess_low_freq(clip: AudioClip, config: DspConfig) -> AudioClip:
    """Preemphasis then Butterworth low-pass, with config coefficients"""
    emphasized = preemphasize(clip.samples, config.preemphasis_h)
    filtered = butterworth_lowpass(
        emphasized, config.butterworth_order, config.butterworth_cutoff_hz, clip.sample_rate_hz
    )
    return AudioClip(samples=filtered, sample_rate_hz=clip.sample_rate_hz, source_id=clip.source_id)

