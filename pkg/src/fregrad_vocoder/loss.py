#!/usr/bin/env python3
"""
Training losses

The diffusion loss weights the noise error by the inverse prior variance.
The magnitude loss compares log-magnitude STFTs at several resolutions.
Both work on Tensors so they can be differentiated; passing plain arrays
evaluates them without building a graph entry that needs gradients.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .dsp import StftConfig

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.1
MAG_LOG_FLOOR = 1e-7


@dataclass
class MagLossConfig:
    """STFT resolutions averaged by the magnitude loss."""

    fft_sizes: List[int] = field(default_factory=lambda: [512, 1024, 2048])
    window_sizes: List[int] = field(default_factory=lambda: [240, 600, 1200])
    hop_sizes: List[int] = field(default_factory=lambda: [50, 120, 240])

    def __post_init__(self):
        if not (len(self.fft_sizes) == len(self.window_sizes) == len(self.hop_sizes)):
            raise ValueError("fft_sizes, window_sizes and hop_sizes must have equal length")
        if not self.fft_sizes:
            raise ValueError("At least one STFT resolution is required")
        # validates every triple
        self.resolutions()

    @property
    def M(self) -> int:
        return len(self.fft_sizes)

    def resolutions(self) -> List[StftConfig]:
        return [
            StftConfig(fft, win, hop)
            for fft, win, hop in zip(self.fft_sizes, self.window_sizes, self.hop_sizes)
        ]

    def min_length(self) -> int:
        return max(r.min_length for r in self.resolutions())


def _check_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shapes differ {a.shape} vs {b.shape}")


def diff_loss(eps, eps_hat, sigma) -> Tensor:
    """mean(((eps - eps_hat) / sigma)^2); sigma broadcasts over the batch."""
    eps, eps_hat = ag.as_tensor(eps), ag.as_tensor(eps_hat)
    _check_same_shape(eps, eps_hat, "diff_loss")
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape[-1] != eps.shape[-1]:
        raise ValueError(f"diff_loss: sigma length {sigma.shape[-1]} != {eps.shape[-1]}")
    if np.any(sigma <= 0.0):
        raise ValueError("diff_loss: sigma must be positive")
    weighted = ag.mul(ag.sub(eps, eps_hat), 1.0 / sigma)
    return ag.mean(ag.square(weighted))


def single_resolution_mag_loss(eps, eps_hat, config: StftConfig) -> Tensor:
    """Mean L1 distance between log-magnitude STFTs at one resolution."""
    eps, eps_hat = ag.as_tensor(eps), ag.as_tensor(eps_hat)
    _check_same_shape(eps, eps_hat, "mag_loss")
    if eps.shape[-1] < config.min_length:
        raise ValueError(
            f"mag_loss: signal length {eps.shape[-1]} too short for "
            f"fft {config.fft_size} / window {config.window_size}"
        )
    log_a = ag.log_stft_magnitude(eps, config, MAG_LOG_FLOOR)
    log_b = ag.log_stft_magnitude(eps_hat, config, MAG_LOG_FLOOR)
    return ag.mean(ag.absolute(ag.sub(log_a, log_b)))


def mag_loss(eps, eps_hat, config: MagLossConfig = None) -> Tensor:
    """Average of the single-resolution losses over every resolution."""
    config = config or MagLossConfig()
    terms = [single_resolution_mag_loss(eps, eps_hat, r) for r in config.resolutions()]
    total = terms[0]
    for term in terms[1:]:
        total = ag.add(total, term)
    return ag.scale(total, 1.0 / len(terms))


@dataclass
class LossBreakdown:
    """Per-band components of the final objective."""

    diff_low: Tensor
    diff_high: Tensor
    mag_low: Tensor
    mag_high: Tensor
    total: Tensor

    def values(self) -> Dict[str, float]:
        return {
            "L_diff_l": self.diff_low.item(),
            "L_diff_h": self.diff_high.item(),
            "L_mag_l": self.mag_low.item(),
            "L_mag_h": self.mag_high.item(),
            "L_final": self.total.item(),
        }


def final_loss(
    eps_pairs: Sequence,
    eps_hat_pairs: Sequence,
    sigmas: Sequence[np.ndarray],
    lam: float = DEFAULT_LAMBDA,
    mag_config: MagLossConfig = None,
) -> LossBreakdown:
    """
    Sum over (low, high) of diff_loss + lam * mag_loss.

    With lam == 0 the magnitude terms are not evaluated and report 0.
    """
    if not (len(eps_pairs) == len(eps_hat_pairs) == len(sigmas) == 2):
        raise ValueError("final_loss needs (low, high) for noise, prediction and sigma")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")

    parts: List[Tuple[Tensor, Tensor]] = []
    for eps, eps_hat, sigma in zip(eps_pairs, eps_hat_pairs, sigmas):
        d = diff_loss(eps, eps_hat, sigma)
        m = mag_loss(eps, eps_hat, mag_config) if lam > 0 else ag.Tensor(0.0)
        parts.append((d, m))

    total = None
    for d, m in parts:
        band = ag.add(d, ag.scale(m, lam)) if lam > 0 else d
        total = band if total is None else ag.add(total, band)
    (d_low, m_low), (d_high, m_high) = parts
    return LossBreakdown(d_low, d_high, m_low, m_high, total)
