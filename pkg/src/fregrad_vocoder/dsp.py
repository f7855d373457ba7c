#!/usr/bin/env python3
"""
Signal-domain building blocks

Orthonormal Haar wavelet pair, STFT magnitude and log-mel features, and
16-bit PCM WAV I/O. Every function here is a pure function of its inputs.

Array functions operate on the last axis, so a batch of signals shaped
[..., L] can be passed wherever a single signal is accepted.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Tuple, Union

import librosa
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile
from scipy.signal import get_window

from .errors import AudioIOError, WavFormatError

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)

DEFAULT_SAMPLE_RATE = 22050
DEFAULT_N_FFT = 1024
DEFAULT_HOP_LENGTH = 256
DEFAULT_N_MELS = 80
DEFAULT_FMIN = 80.0
DEFAULT_FMAX = 8000.0
MEL_LOG_FLOOR = 1e-5

PCM16_SCALE = 32768.0


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono audio with samples nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("Waveform needs a non-empty 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("Waveform samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        """Duration in seconds."""
        return len(self) / self.sample_rate


@dataclass(frozen=True, eq=False)
class WaveletPair:
    """Low/high Haar sub-bands of equal length (last axis)."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.asarray(self.low)
        high = np.asarray(self.high)
        if low.shape != high.shape:
            raise ValueError(
                f"Sub-band shapes differ: low {low.shape} vs high {high.shape}"
            )
        if not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))):
            raise ValueError("Sub-band values must be finite")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    def __len__(self) -> int:
        return self.low.shape[-1]

    def stack(self) -> np.ndarray:
        """Return the pair as a [..., 2, L/2] array (low first)."""
        return np.stack([self.low, self.high], axis=-2)

    @classmethod
    def unstack(cls, array: np.ndarray) -> "WaveletPair":
        """Inverse of stack()."""
        return cls(array[..., 0, :], array[..., 1, :])


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    """Log-mel frames, shaped [N, n_mels]."""

    frames: np.ndarray
    hop_length: int = DEFAULT_HOP_LENGTH
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] == 0:
            raise ValueError(f"Mel frames must be a non-empty 2-D matrix, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("Mel frames must be finite")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]

    def channels_first(self) -> np.ndarray:
        """Return the mel as [n_mels, N], the layout the network consumes."""
        return self.frames.T


@dataclass(frozen=True)
class StftConfig:
    """One STFT analysis setting."""

    fft_size: int = DEFAULT_N_FFT
    window_size: int = DEFAULT_N_FFT
    hop_size: int = DEFAULT_HOP_LENGTH
    window: str = "hann"

    def __post_init__(self):
        if min(self.fft_size, self.window_size, self.hop_size) <= 0:
            raise ValueError(f"STFT sizes must be positive: {self}")
        if self.window_size > self.fft_size:
            raise ValueError(
                f"window_size {self.window_size} exceeds fft_size {self.fft_size}"
            )
        if self.hop_size > self.window_size:
            raise ValueError(
                f"hop_size {self.hop_size} exceeds window_size {self.window_size}"
            )

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def min_length(self) -> int:
        """Shortest signal accepted (one window, and room for reflect padding)."""
        return max(self.window_size, self.fft_size // 2 + 1)


# ---------------------------------------------------------------------------
# Haar wavelet pair
# ---------------------------------------------------------------------------


def haar_split(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Array-level Haar analysis along the last axis, keeping the input dtype.

    low[k] = (x[2k] + x[2k+1]) / sqrt(2), high[k] = (x[2k] - x[2k+1]) / sqrt(2)

    Values are not checked for finiteness; the autograd ops rely on that.
    """
    length = x.shape[-1]
    if length < 2 or length % 2:
        raise ValueError(f"haar_dwt needs an even length >= 2, got {length}")
    even = x[..., 0::2]
    odd = x[..., 1::2]
    return (even + odd) / SQRT2, (even - odd) / SQRT2


def haar_merge(low: np.ndarray, high: np.ndarray) -> np.ndarray:
    """Inverse of haar_split."""
    if low.shape != high.shape:
        raise ValueError(f"Sub-band shapes differ: {low.shape} vs {high.shape}")
    out = np.empty(low.shape[:-1] + (2 * low.shape[-1],), dtype=np.result_type(low, high))
    out[..., 0::2] = (low + high) / SQRT2
    out[..., 1::2] = (low - high) / SQRT2
    return out


def haar_dwt(signal: np.ndarray) -> WaveletPair:
    """
    One-level orthonormal Haar DWT along the last axis.

    Raises:
        ValueError: if the length is odd or shorter than 2. Callers pad first.
    """
    return WaveletPair(*haar_split(np.asarray(signal, dtype=np.float64)))


def haar_idwt(pair: WaveletPair) -> np.ndarray:
    """Inverse of haar_dwt; output length is twice the sub-band length."""
    return haar_merge(
        np.asarray(pair.low, dtype=np.float64), np.asarray(pair.high, dtype=np.float64)
    )


# ---------------------------------------------------------------------------
# STFT and mel features
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def stft_window(config: StftConfig) -> np.ndarray:
    """Analysis window of length fft_size with window_size taps centred in it."""
    if config.window in ("rect", "rectangular", "boxcar"):
        taps = np.ones(config.window_size)
    else:
        taps = get_window(config.window, config.window_size, fftbins=True)
    window = np.zeros(config.fft_size)
    offset = (config.fft_size - config.window_size) // 2
    window[offset : offset + config.window_size] = taps
    window.setflags(write=False)
    return window


def frame_count(length: int, hop_size: int) -> int:
    """Frames produced for a signal of `length` samples: ceil(length / hop)."""
    return -(-length // hop_size)


def frame_signal(signal: np.ndarray, config: StftConfig) -> np.ndarray:
    """
    Centre-pad (reflect) and slice a signal into frames.

    Returns:
        Array shaped [..., n_frames, fft_size] where n_frames = ceil(L / hop).
    """
    x = np.asarray(signal, dtype=np.float64)
    length = x.shape[-1]
    if length < config.min_length:
        raise ValueError(
            f"Signal of length {length} is shorter than one analysis window "
            f"(needs >= {config.min_length} for fft_size={config.fft_size}, "
            f"window_size={config.window_size})"
        )
    pad = config.fft_size // 2
    pad_width = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
    padded = np.pad(x, pad_width, mode="reflect")
    frames = sliding_window_view(padded, config.fft_size, axis=-1)[
        ..., :: config.hop_size, :
    ]
    return frames[..., : frame_count(length, config.hop_size), :]


def stft_magnitude(signal: np.ndarray, config: StftConfig) -> np.ndarray:
    """
    Magnitude STFT, shaped [..., n_frames, fft_size // 2 + 1]. Entries are >= 0.
    """
    frames = frame_signal(signal, config) * stft_window(config)
    return np.abs(np.fft.rfft(frames, n=config.fft_size, axis=-1))


@lru_cache(maxsize=8)
def mel_filterbank(
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    n_fft: int = DEFAULT_N_FFT,
    n_mels: int = DEFAULT_N_MELS,
    fmin: float = DEFAULT_FMIN,
    fmax: float = DEFAULT_FMAX,
) -> np.ndarray:
    """HTK-scale triangular filterbank shaped [n_mels, n_fft // 2 + 1]."""
    basis = librosa.filters.mel(
        sr=sample_rate,
        n_fft=n_fft,
        n_mels=n_mels,
        fmin=fmin,
        fmax=fmax,
        htk=True,
        norm=None,
        dtype=np.float64,
    )
    basis.setflags(write=False)
    return basis


def mel_spectrogram(
    waveform: Union[Waveform, np.ndarray],
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    n_fft: int = DEFAULT_N_FFT,
    hop_length: int = DEFAULT_HOP_LENGTH,
    n_mels: int = DEFAULT_N_MELS,
    fmin: float = DEFAULT_FMIN,
    fmax: float = DEFAULT_FMAX,
) -> MelSpectrogram:
    """
    Natural-log mel filterbank energies of a waveform.

    Uses a Hann window of n_fft taps, centre padding, and
    ln(max(energy, 1e-5)). Frame count is ceil(L / hop_length).

    Args:
        waveform: A Waveform (its sample rate wins) or a raw 1-D array
        sample_rate: Used when a raw array is given
    """
    if isinstance(waveform, Waveform):
        samples = waveform.samples
        sample_rate = waveform.sample_rate
    else:
        samples = np.asarray(waveform, dtype=np.float64)
        if samples.size == 0:
            raise ValueError("mel_spectrogram needs a non-empty signal")
    config = StftConfig(fft_size=n_fft, window_size=n_fft, hop_size=hop_length)
    magnitude = stft_magnitude(samples, config)
    energies = magnitude @ mel_filterbank(sample_rate, n_fft, n_mels, fmin, fmax).T
    frames = np.log(np.maximum(energies, MEL_LOG_FLOOR))
    return MelSpectrogram(frames, hop_length=hop_length, sample_rate=sample_rate)


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------


def read_wav(path: Union[str, Path]) -> Waveform:
    """
    Read a 16-bit PCM mono WAV file.

    Raises:
        AudioIOError: if the file cannot be opened
        WavFormatError: if the file is empty, not PCM16, or not mono
    """
    path = Path(path)
    try:
        sample_rate, data = wavfile.read(str(path))
    except (FileNotFoundError, PermissionError, IsADirectoryError) as e:
        raise AudioIOError(f"Cannot read {path}: {e}") from e
    except (ValueError, EOFError) as e:
        raise WavFormatError(f"{path} is not a readable WAV file: {e}") from e

    if data.dtype != np.int16:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype} (need PCM16)")
    if data.ndim != 1:
        raise WavFormatError(
            f"{path}: unsupported channel count {data.shape[1]} (need mono)"
        )
    if data.size == 0:
        raise WavFormatError(f"{path}: no samples")

    logger.debug(f"Read {path} ({data.size} samples @ {sample_rate} Hz)")
    return Waveform(data.astype(np.float64) / PCM16_SCALE, int(sample_rate))


def write_wav(path: Union[str, Path], waveform: Waveform) -> None:
    """Write a waveform as 16-bit PCM mono, clamping amplitudes to [-1, 1]."""
    path = Path(path)
    clipped = np.clip(waveform.samples, -1.0, 1.0)
    pcm = np.clip(np.round(clipped * PCM16_SCALE), -32768, 32767).astype(np.int16)
    try:
        wavfile.write(str(path), waveform.sample_rate, pcm)
    except OSError as e:
        raise AudioIOError(f"Cannot write {path}: {e}") from e
    logger.debug(f"Wrote {path} ({pcm.size} samples)")
