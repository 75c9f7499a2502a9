"""
Unit tests for spectral features and low-frequency preprocessing.

Tests cover:
- HTK Mel mapping, filterbank shape, unimodal rows and the filter-count limit
- Log-Mel frames, log floor, determinism and lowest-k band selection
- Preemphasis, Butterworth gain, linearity and the preprocessing chain
"""

import numpy as np
import pytest
from scipy import signal

from src.core import dsp
from src.core.errors import (
    ClipTooShort,
    CutoffOutOfRange,
    EmptyClip,
    KOutOfRange,
    SampleRateMismatch,
    TooManyFilters,
)
from src.models.config import DspConfig
from src.models.domain import AudioClip
from tests.fixtures.synthetic import tone

SR = 16000


def small_config(**overrides) -> DspConfig:
    values = dict(n_fft=512, hop=256, n_mels=40)
    values.update(overrides)
    return DspConfig(**values)


def gain_db(freq_hz: float, order: int = 5, cutoff_hz: float = 400.0) -> float:
    """Steady-state sine gain measured on the filtered signal"""
    x = np.sin(2.0 * np.pi * freq_hz * np.arange(2 * SR) / SR)
    y = dsp.butterworth_lowpass(x, order, cutoff_hz, SR)
    tail = slice(SR, None)
    return 20.0 * np.log10(np.sqrt(np.mean(y[tail] ** 2)) / np.sqrt(np.mean(x[tail] ** 2)))


class TestMelScale:
    """Test the HTK Mel mapping and the filterbank"""

    def test_htk_reference_point(self):
        assert dsp.hz_to_mel(1000.0) == pytest.approx(2595.0 * np.log10(1.0 + 1000.0 / 700.0))
        assert dsp.mel_to_hz(dsp.hz_to_mel(440.0)) == pytest.approx(440.0)

    def test_filterbank_shape_and_centers(self):
        bank = dsp.mel_filterbank(small_config(), SR)
        assert bank.weights.shape == (40, 257)
        assert np.all(np.diff(bank.centers_hz) > 0)
        assert np.all(bank.weights >= 0)
        assert np.all(bank.weights.max(axis=1) > 0)
        assert np.all(bank.weights <= 1.0 + 1e-12)

    def test_too_many_filters(self):
        with pytest.raises(TooManyFilters):
            dsp.mel_filterbank(small_config(n_fft=256, hop=128, n_mels=200), SR)

    def test_two_hundred_filters_need_2048_point_fft(self):
        with pytest.raises(TooManyFilters):
            dsp.mel_filterbank(small_config(n_fft=1024, hop=512, n_mels=200), SR)
        bank = dsp.mel_filterbank(small_config(n_fft=2048, hop=512, n_mels=200), SR)
        assert bank.weights.shape == (200, 1025)

    def test_rows_unimodal(self):
        bank = dsp.mel_filterbank(small_config(), SR)
        for row in bank.weights:
            assert row.max() > 0.0
            peak = int(np.argmax(row))
            steps = np.diff(row)
            assert np.all(steps[:peak] >= 0.0)
            assert np.all(steps[peak:] <= 0.0)


class TestSpectrogram:
    """Test log-Mel extraction"""

    def test_frame_count(self):
        spec = dsp.mel_spectrogram(AudioClip(tone(1000.0, 1.0), SR, "t"), small_config())
        assert spec.values.shape == (1 + (SR - 512) // 256, 40)
        assert spec.frame_rate_hz == pytest.approx(SR / 256)
        assert spec.source_id == "t"

    def test_tone_peaks_near_its_frequency(self):
        spec = dsp.mel_spectrogram(AudioClip(tone(1000.0, 0.5), SR, "t"), small_config())
        peak_band = int(np.argmax(spec.values.mean(axis=0)))
        assert abs(spec.band_centers_hz[peak_band] - 1000.0) < 150.0

    def test_silence_hits_log_floor(self):
        cfg = small_config()
        spec = dsp.mel_spectrogram(AudioClip(np.zeros(2048), SR, "z"), cfg)
        np.testing.assert_allclose(spec.values, np.log(cfg.log_floor))

    def test_rectangular_window_energy(self, rng):
        cfg = small_config(window_fn="rectangular")
        frame = rng.normal(size=512)
        power = dsp.power_spectrogram(frame, cfg)
        assert power.shape == (1, 257)
        assert dsp.frame_energy(power, 512)[0] == pytest.approx(float(frame @ frame), rel=1e-10)

    def test_errors(self):
        with pytest.raises(ClipTooShort):
            dsp.mel_spectrogram(AudioClip(np.zeros(100), SR, "s"), small_config())
        with pytest.raises(SampleRateMismatch):
            dsp.mel_spectrogram(AudioClip(np.zeros(4096), 8000, "s"), small_config())

    def test_lowest_k_bands(self):
        spec = dsp.mel_spectrogram(AudioClip(tone(300.0, 0.2), SR, "t"), small_config())
        low = dsp.lowest_k_bands(spec, 10)
        assert low.n_bands == 10
        np.testing.assert_array_equal(low.values, spec.values[:, :10])
        np.testing.assert_array_equal(low.band_centers_hz, spec.band_centers_hz[:10])
        with pytest.raises(KOutOfRange):
            dsp.lowest_k_bands(spec, 0)
        with pytest.raises(KOutOfRange):
            dsp.lowest_k_bands(spec, 41)

    def test_bit_identical_reruns(self, rng):
        clip = AudioClip(rng.normal(size=SR // 2), SR, "n")
        first = dsp.mel_spectrogram(clip, small_config())
        dsp._cached_filterbank.cache_clear()
        second = dsp.mel_spectrogram(clip, small_config())
        assert first.values.tobytes() == second.values.tobytes()

    def test_lowest_k_composes(self):
        spec = dsp.mel_spectrogram(AudioClip(tone(300.0, 0.2), SR, "t"), small_config())
        for k in (10, 25, 40):
            for j in (1, 5, k):
                nested = dsp.lowest_k_bands(dsp.lowest_k_bands(spec, k), j)
                direct = dsp.lowest_k_bands(spec, j)
                np.testing.assert_array_equal(nested.values, direct.values)
                np.testing.assert_array_equal(nested.band_centers_hz, direct.band_centers_hz)

    def test_raw_frames(self):
        cfg = small_config(input="raw", raw_frame=300)
        spec = dsp.extract_features(AudioClip(np.arange(1000, dtype=float) / 1000.0, SR, "r"), cfg)
        assert spec.values.shape == (3, 300)
        assert spec.values[1, 0] == pytest.approx(0.3)
        assert spec.frame_rate_hz == pytest.approx(SR / 300)


class TestLowFrequencyPreprocessing:
    """Test preemphasis and the Butterworth low-pass"""

    def test_preemphasis(self):
        np.testing.assert_allclose(dsp.preemphasize([1.0, 2.0, 3.0], 1.0), [1.0, 1.0, 1.0])
        np.testing.assert_allclose(dsp.preemphasize([2.0, 2.0], 0.5), [2.0, 1.0])
        with pytest.raises(EmptyClip):
            dsp.preemphasize([], 1.0)

    def test_cutoff_gain(self):
        assert gain_db(400.0) == pytest.approx(-3.01, abs=0.1)

    def test_octave_above_cutoff(self):
        assert gain_db(800.0) == pytest.approx(-30.1, abs=1.5)

    def test_dc_gain(self):
        y = dsp.butterworth_lowpass(np.ones(SR), 5, 400.0, SR)
        assert 20.0 * np.log10(y[-1]) == pytest.approx(0.0, abs=0.01)

    def test_cutoff_out_of_range(self):
        with pytest.raises(CutoffOutOfRange):
            dsp.butterworth_sos(5, 8000.0, SR)
        with pytest.raises(CutoffOutOfRange):
            dsp.butterworth_sos(5, 0.0, SR)

    def test_lowpass_is_linear(self, rng):
        x, y = rng.normal(size=4000), rng.normal(size=4000)
        combined = dsp.butterworth_lowpass(2.5 * x - 0.7 * y, 5, 400.0, SR)
        separate = 2.5 * dsp.butterworth_lowpass(x, 5, 400.0, SR) - 0.7 * dsp.butterworth_lowpass(y, 5, 400.0, SR)
        assert np.linalg.norm(combined - separate) <= 1e-9 * np.linalg.norm(separate)

    def test_preprocess_chain(self):
        clip = AudioClip(tone(100.0, 0.1), SR, "p")
        out = dsp.preprocess_low_freq(clip, DspConfig())
        assert out.source_id == "p"
        assert out.samples.shape == clip.samples.shape
        expected = dsp.butterworth_lowpass(dsp.preemphasize(clip.samples, 1.0), 5, 400.0, SR)
        np.testing.assert_allclose(out.samples, expected)
        assert not np.allclose(out.samples, clip.samples)

    def test_near_identity_configuration_keeps_level(self):
        t = np.arange(SR) / SR
        x = sum(np.sin(2.0 * np.pi * f * t) for f in (300.0, 1000.0, 2500.0))
        cfg = DspConfig(preemphasis_h=0.0, butterworth_cutoff_hz=7900.0)
        y = dsp.preprocess_low_freq(AudioClip(x, SR, "n"), cfg).samples
        tail = slice(SR // 2, None)
        level = np.sqrt(np.mean(y[tail] ** 2)) / np.sqrt(np.mean(x[tail] ** 2))
        assert abs(level - 1.0) <= 0.01

    def test_white_noise_high_band_suppressed(self, rng):
        noise = rng.normal(size=10 * SR)
        out = dsp.preprocess_low_freq(AudioClip(noise, SR, "w"), DspConfig())
        freqs, psd = signal.welch(out.samples, fs=SR, nperseg=2048)
        reference = psd[(freqs >= 90.0) & (freqs <= 110.0)].mean()
        high_band = psd[freqs > 800.0].mean()
        assert 10.0 * np.log10(high_band / reference) <= -25.0
