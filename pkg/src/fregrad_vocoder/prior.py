#!/usr/bin/env python3
"""
Mel-derived Gaussian priors for the two wavelet sub-bands.

Each sub-band gets a diagonal prior N(0, diag(sigma^2)) whose per-sample
sigma follows the normalised frame energy of its half of the mel
spectrogram: low bins drive sigma_low, high bins drive sigma_high.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .dsp import MelSpectrogram, WaveletPair

logger = logging.getLogger(__name__)

DEFAULT_SIGMA_MIN = 0.1
DEFAULT_SPLIT_BIN = 40


@dataclass(frozen=True, eq=False)
class PriorVariance:
    """Per-sample prior standard deviations for both sub-bands."""

    sigma_low: np.ndarray
    sigma_high: np.ndarray
    sigma_min: float = DEFAULT_SIGMA_MIN

    def __post_init__(self):
        low = np.asarray(self.sigma_low, dtype=np.float64)
        high = np.asarray(self.sigma_high, dtype=np.float64)
        if not self.sigma_min > 0.0:
            raise ValueError(f"sigma_min must be > 0, got {self.sigma_min}")
        if low.shape != high.shape:
            raise ValueError(f"sigma lengths differ: {low.shape} vs {high.shape}")
        for name, values in (("sigma_low", low), ("sigma_high", high)):
            if not np.all(np.isfinite(values)):
                raise ValueError(f"{name} must be finite")
            # small slack for the floor itself after float arithmetic
            if np.any(values < self.sigma_min * (1 - 1e-12)) or np.any(values > 1.0):
                raise ValueError(f"{name} must lie in [sigma_min, 1]")
        object.__setattr__(self, "sigma_low", low)
        object.__setattr__(self, "sigma_high", high)

    def __len__(self) -> int:
        return self.sigma_low.shape[-1]

    def as_pair(self) -> WaveletPair:
        return WaveletPair(self.sigma_low, self.sigma_high)


def split_mel(
    mel: MelSpectrogram, split_bin: int = DEFAULT_SPLIT_BIN
) -> Tuple[np.ndarray, np.ndarray]:
    """Split an [N, 80] mel into bins [0, split_bin) and [split_bin, 80)."""
    if mel.n_mels != 80:
        raise ValueError(f"split_mel expects 80 mel bins, got {mel.n_mels}")
    if not 0 < split_bin < mel.n_mels:
        raise ValueError(f"split_bin must be inside 1..79, got {split_bin}")
    return mel.frames[:, :split_bin], mel.frames[:, split_bin:]


def frame_sigma(segment: np.ndarray, sigma_min: float = DEFAULT_SIGMA_MIN) -> np.ndarray:
    """
    Per-frame sigma from a block of log-mel bins.

    Energy per frame is the mean of exp(log-mel) over bins; it is
    normalised by the utterance maximum, square-rooted, and clamped below
    at sigma_min.
    """
    segment = np.asarray(segment, dtype=np.float64)
    if segment.ndim != 2 or segment.size == 0:
        raise ValueError(f"frame_sigma needs a non-empty [N, bins] matrix, got {segment.shape}")
    if not np.all(np.isfinite(segment)):
        raise ValueError("frame_sigma needs finite mel values")
    energy = np.exp(segment).mean(axis=1)
    peak = energy.max()
    normalised = energy / peak
    return np.clip(np.sqrt(normalised), sigma_min, 1.0)


def expand_sigma(
    sigma: np.ndarray, samples_per_frame: int, target_length: Optional[int] = None
) -> np.ndarray:
    """
    Repeat each frame's sigma samples_per_frame times.

    When target_length is given the result is cropped or edge-extended to
    it; a mismatch of more than one frame is an error.
    """
    if samples_per_frame < 1:
        raise ValueError(f"samples_per_frame must be >= 1, got {samples_per_frame}")
    expanded = np.repeat(np.asarray(sigma, dtype=np.float64), samples_per_frame)
    if target_length is None or target_length == expanded.shape[0]:
        return expanded
    if abs(expanded.shape[0] - target_length) > samples_per_frame:
        raise ValueError(
            f"Prior covers {expanded.shape[0]} samples but the sub-band has "
            f"{target_length}; more than one frame ({samples_per_frame}) apart"
        )
    if expanded.shape[0] > target_length:
        return expanded[:target_length]
    return np.pad(expanded, (0, target_length - expanded.shape[0]), mode="edge")


def build_prior(
    mel: MelSpectrogram,
    subband_length: Optional[int] = None,
    separate: bool = True,
    sigma_min: float = DEFAULT_SIGMA_MIN,
    split_bin: int = DEFAULT_SPLIT_BIN,
) -> PriorVariance:
    """
    Build the sub-band priors of one utterance.

    With separate=False both bands share the sigma computed from all mel bins.
    """
    samples_per_frame = mel.hop_length // 2
    if separate:
        low_half, high_half = split_mel(mel, split_bin)
        low = frame_sigma(low_half, sigma_min)
        high = frame_sigma(high_half, sigma_min)
    else:
        low = high = frame_sigma(mel.frames, sigma_min)
    return PriorVariance(
        expand_sigma(low, samples_per_frame, subband_length),
        expand_sigma(high, samples_per_frame, subband_length),
        sigma_min,
    )


def sample_prior_noise(prior: PriorVariance, rng: np.random.Generator) -> WaveletPair:
    """Draw eps ~ N(0, sigma^2) independently per sample, low band first."""
    low = rng.standard_normal(prior.sigma_low.shape) * prior.sigma_low
    high = rng.standard_normal(prior.sigma_high.shape) * prior.sigma_high
    return WaveletPair(low, high)
