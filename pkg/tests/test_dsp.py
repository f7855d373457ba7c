"""
Tests for the Haar wavelet pair, STFT/mel features and WAV I/O.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.io import wavfile

from fregrad_vocoder.dsp import (
    MEL_LOG_FLOOR,
    MelSpectrogram,
    StftConfig,
    Waveform,
    WaveletPair,
    frame_count,
    haar_dwt,
    haar_idwt,
    mel_spectrogram,
    read_wav,
    stft_magnitude,
    write_wav,
)
from fregrad_vocoder.errors import AudioIOError, WavFormatError

SQRT2 = np.sqrt(2.0)


@pytest.mark.unit
class TestHaar:
    """Orthonormal Haar analysis and synthesis."""

    @pytest.mark.parametrize(
        "signal, low, high",
        [
            ([1.0, 1.0], [SQRT2], [0.0]),
            ([1.0, -1.0], [0.0], [SQRT2]),
            ([3.0, 1.0], [2 * SQRT2], [SQRT2]),
        ],
    )
    def test_known_pairs(self, signal, low, high):
        pair = haar_dwt(np.array(signal))
        assert_allclose(pair.low, low, atol=1e-15)
        assert_allclose(pair.high, high, atol=1e-15)

    def test_inverse_of_known_pairs(self):
        assert_allclose(haar_idwt(WaveletPair([SQRT2], [0.0])), [1.0, 1.0])
        assert_allclose(haar_idwt(WaveletPair([0.0], [0.0])), [0.0, 0.0])

    def test_odd_length_rejected(self):
        with pytest.raises(ValueError, match="even length"):
            haar_dwt(np.ones(3))
        with pytest.raises(ValueError):
            haar_dwt(np.ones(1))

    def test_mismatched_subbands_rejected(self):
        with pytest.raises(ValueError):
            WaveletPair(np.zeros(3), np.zeros(4))

    def test_perfect_reconstruction_many_lengths(self):
        """1000 random even-length signals reconstruct to within 1e-12."""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            length = 2 * int(rng.integers(1, 8193))
            x = rng.standard_normal(length)
            pair = haar_dwt(x)
            assert len(pair) == length // 2
            assert np.max(np.abs(haar_idwt(pair) - x)) < 1e-12

    def test_energy_conserved(self):
        x = np.random.default_rng(1).standard_normal(4096)
        pair = haar_dwt(x)
        energy = np.sum(x**2)
        assert abs(energy - np.sum(pair.low**2) - np.sum(pair.high**2)) < 1e-9 * energy

    def test_linearity(self):
        rng = np.random.default_rng(2)
        x, y = rng.standard_normal(64), rng.standard_normal(64)
        combined = haar_dwt(2.0 * x - 3.0 * y)
        px, py = haar_dwt(x), haar_dwt(y)
        assert_allclose(combined.low, 2.0 * px.low - 3.0 * py.low, atol=1e-12)
        assert_allclose(combined.high, 2.0 * px.high - 3.0 * py.high, atol=1e-12)

    def test_batched_last_axis(self):
        x = np.random.default_rng(3).standard_normal((3, 16))
        pair = haar_dwt(x)
        assert pair.low.shape == (3, 8)
        assert_allclose(pair.stack()[:, 0, :], pair.low)
        assert_allclose(haar_idwt(pair), x, atol=1e-12)


@pytest.mark.unit
class TestStft:
    """STFT magnitude framing and values."""

    def test_zero_signal(self):
        config = StftConfig(512, 240, 50)
        assert np.all(stft_magnitude(np.zeros(2000), config) == 0.0)

    def test_frame_count_and_shape(self):
        config = StftConfig(1024, 1024, 256)
        mag = stft_magnitude(np.random.default_rng(0).standard_normal(25600), config)
        assert mag.shape == (100, 513)
        assert frame_count(25601, 256) == 101

    def test_nonnegative_and_sign_invariant(self):
        config = StftConfig(512, 240, 50)
        x = np.random.default_rng(1).standard_normal(3000)
        mag = stft_magnitude(x, config)
        assert np.all(mag >= 0)
        assert_allclose(stft_magnitude(-x, config), mag)

    def test_homogeneity(self):
        config = StftConfig(1024, 600, 120)
        x = np.random.default_rng(2).standard_normal(4000)
        assert_allclose(stft_magnitude(2 * x, config), 2 * stft_magnitude(x, config))

    def test_bin_aligned_sinusoid_rectangular(self):
        """An exact-bin cosine peaks at its bin; matches a direct DFT of one frame."""
        n_fft, k0 = 256, 10
        config = StftConfig(n_fft, n_fft, 64, window="rect")
        x = np.cos(2 * np.pi * k0 * np.arange(2048) / n_fft)
        mag = stft_magnitude(x, config)
        interior = mag[4:-4]
        assert np.all(np.argmax(interior, axis=1) == k0)

        frame = x[5 * 64 - n_fft // 2 : 5 * 64 + n_fft // 2]
        n = np.arange(n_fft)
        direct = np.abs([np.sum(frame * np.exp(-2j * np.pi * k * n / n_fft)) for k in range(n_fft // 2 + 1)])
        assert_allclose(mag[5], direct, atol=1e-8)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError, match="shorter than one analysis window"):
            stft_magnitude(np.zeros(100), StftConfig(512, 240, 50))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            StftConfig(256, 512, 64)
        with pytest.raises(ValueError):
            StftConfig(512, 240, 300)


@pytest.mark.unit
class TestMel:
    """Log-mel features."""

    def test_zero_signal_hits_floor(self):
        mel = mel_spectrogram(np.zeros(25600))
        assert mel.frames.shape == (100, 80)
        assert_allclose(mel.frames, np.log(MEL_LOG_FLOOR))

    def test_energy_ordering(self):
        noise = np.random.default_rng(0).uniform(-1, 1, 22050)
        loud = mel_spectrogram(noise).frames
        quiet = mel_spectrogram(0.01 * noise).frames
        assert np.mean(np.exp(loud)) > np.mean(np.exp(quiet))

    def test_waveform_sample_rate_wins(self):
        mel = mel_spectrogram(Waveform(np.zeros(2048), 16000))
        assert mel.sample_rate == 16000
        assert mel.n_frames == 8

    def test_mel_type_validation(self):
        with pytest.raises(ValueError):
            MelSpectrogram(np.full((2, 80), np.nan))
        assert MelSpectrogram(np.zeros((3, 80))).channels_first().shape == (80, 3)


@pytest.mark.unit
@pytest.mark.integration
class TestWavIO:
    """16-bit PCM mono reading and writing."""

    def test_round_trip(self, temp_dir, make_tone):
        path = f"{temp_dir}/tone.wav"
        original = Waveform(make_tone(440.0, amplitude=0.9), 22050)
        write_wav(path, original)
        restored = read_wav(path)
        assert restored.sample_rate == 22050
        assert np.max(np.abs(restored.samples - original.samples)) <= 1.0 / 32768

    def test_clamps_on_write(self, temp_dir):
        path = f"{temp_dir}/loud.wav"
        write_wav(path, Waveform(np.array([2.0, -2.0, 0.0, 0.5])))
        samples = read_wav(path).samples
        assert samples.max() <= 1.0 and samples.min() == -1.0

    def test_empty_file(self, temp_dir):
        path = f"{temp_dir}/empty.wav"
        open(path, "wb").close()
        with pytest.raises(WavFormatError):
            read_wav(path)

    def test_no_samples(self, temp_dir):
        path = f"{temp_dir}/nosamples.wav"
        wavfile.write(path, 22050, np.zeros(0, dtype=np.int16))
        with pytest.raises(WavFormatError):
            read_wav(path)

    def test_stereo_rejected(self, temp_dir):
        path = f"{temp_dir}/stereo.wav"
        wavfile.write(path, 22050, np.zeros((100, 2), dtype=np.int16))
        with pytest.raises(WavFormatError, match="mono"):
            read_wav(path)

    def test_float_format_rejected(self, temp_dir):
        path = f"{temp_dir}/float.wav"
        wavfile.write(path, 22050, np.zeros(100, dtype=np.float32))
        with pytest.raises(WavFormatError, match="PCM16"):
            read_wav(path)

    def test_missing_file(self, temp_dir):
        with pytest.raises(AudioIOError):
            read_wav(f"{temp_dir}/missing.wav")
