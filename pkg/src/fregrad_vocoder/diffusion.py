#!/usr/bin/env python3
"""
Wavelet-domain diffusion

Forward noising of (low, high) sub-band pairs, the training step that
assembles the weighted objective, and the ancestral sampler. The sampler
works on WaveletPair values only and converts to audio with one final
inverse DWT.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import autograd as ag
from .container import write_matrix
from .dsp import MelSpectrogram, Waveform, WaveletPair, haar_dwt, haar_idwt
from .loss import DEFAULT_LAMBDA, LossBreakdown, MagLossConfig, final_loss
from .model import FreGrad
from .prior import DEFAULT_SIGMA_MIN, PriorVariance, build_prior, sample_prior_noise
from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)

Steps = Union[int, np.ndarray]


def _gamma(schedule: NoiseSchedule, t: Steps) -> np.ndarray:
    steps = np.asarray(t)
    if np.any(steps < 1) or np.any(steps > schedule.T):
        raise ValueError(f"Timestep {t} outside 1..{schedule.T}")
    return schedule.gamma_new[steps - 1]


def forward_diffuse(
    x0_pair: WaveletPair, t: Steps, eps_pair: WaveletPair, schedule: NoiseSchedule
) -> WaveletPair:
    """
    x_t = sqrt(gamma_new[t]) * x_0 + sqrt(1 - gamma_new[t]) * eps, per band.

    t may be a single step or one step per leading (batch) row.
    """
    if x0_pair.low.shape != eps_pair.low.shape:
        raise ValueError(
            f"Signal and noise lengths differ: {x0_pair.low.shape} vs {eps_pair.low.shape}"
        )
    gamma = _gamma(schedule, t)
    if gamma.ndim:
        gamma = gamma.reshape(gamma.shape + (1,) * (x0_pair.low.ndim - gamma.ndim))
    signal, noise = np.sqrt(gamma), np.sqrt(1.0 - gamma)
    return WaveletPair(
        signal * x0_pair.low + noise * eps_pair.low,
        signal * x0_pair.high + noise * eps_pair.high,
    )


def posterior_mean(x_t, eps_hat, beta_tilde: float, gamma_t: float) -> np.ndarray:
    """mu = (x_t - beta / sqrt(1 - gamma_t) * eps_hat) / sqrt(1 - beta)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    return (x_t - beta_tilde / np.sqrt(1.0 - gamma_t) * eps_hat) / np.sqrt(1.0 - beta_tilde)


def posterior_variance(beta_tilde: float, gamma_t: float, gamma_prev: float) -> float:
    """(1 - gamma_{t-1}) / (1 - gamma_t) * beta."""
    return (1.0 - gamma_prev) / (1.0 - gamma_t) * beta_tilde


def reverse_step(
    x_t: WaveletPair,
    t: int,
    eps_hat: WaveletPair,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    prior: Optional[PriorVariance] = None,
) -> WaveletPair:
    """
    One ancestral step x_t -> x_{t-1}.

    Injected noise is prior-shaped when a prior is given (unit Gaussian
    otherwise). No noise is added at t == 1.
    """
    if t < 1:
        raise ValueError(f"reverse_step needs t >= 1, got {t}")
    beta = schedule.beta_tilde_at(t)
    gamma_t = schedule.gamma_at(t)
    gamma_prev = schedule.gamma_at(t - 1)
    low = posterior_mean(x_t.low, eps_hat.low, beta, gamma_t)
    high = posterior_mean(x_t.high, eps_hat.high, beta, gamma_t)
    if t > 1:
        sigma = np.sqrt(posterior_variance(beta, gamma_t, gamma_prev))
        if prior is not None:
            z = sample_prior_noise(prior, rng)
        else:
            z = WaveletPair(rng.standard_normal(low.shape), rng.standard_normal(high.shape))
        low = low + sigma * z.low
        high = high + sigma * z.high
    return WaveletPair(low, high)


@dataclass
class TrainStepResult:
    """Loss components of one step plus the random draws that produced them."""

    losses: LossBreakdown
    t: np.ndarray
    eps: WaveletPair
    sigma: WaveletPair

    @property
    def loss(self) -> float:
        return self.losses.total.item()


def batch_priors(
    mels: Sequence[MelSpectrogram],
    subband_length: int,
    separate: bool = True,
    sigma_min: float = DEFAULT_SIGMA_MIN,
) -> WaveletPair:
    """Stack per-utterance priors into [B, L/2] sigma arrays."""
    priors = [build_prior(m, subband_length, separate, sigma_min) for m in mels]
    return WaveletPair(
        np.stack([p.sigma_low for p in priors]), np.stack([p.sigma_high for p in priors])
    )


def train_step(
    model: FreGrad,
    waveforms: np.ndarray,
    mels: Sequence[MelSpectrogram],
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    lam: float = DEFAULT_LAMBDA,
    mag_config: Optional[MagLossConfig] = None,
    separate_prior: bool = True,
    sigma_min: float = DEFAULT_SIGMA_MIN,
) -> TrainStepResult:
    """
    Compute the training objective on a batch and backpropagate it.

    Random draws happen in a fixed order: timesteps, low-band noise,
    high-band noise. Gradients accumulate into the model parameters;
    callers zero them between steps.

    Args:
        waveforms: [B, L] with L even and L / 2 == frames * upsample_factor
        mels: one MelSpectrogram per batch row
    """
    waveforms = np.atleast_2d(np.asarray(waveforms, dtype=np.float64))
    batch = waveforms.shape[0]
    if len(mels) != batch:
        raise ValueError(f"Got {batch} waveforms but {len(mels)} mels")
    x0 = haar_dwt(waveforms)
    half = len(x0)
    sigma = batch_priors(mels, half, separate_prior, sigma_min)

    t = rng.integers(1, schedule.T + 1, size=batch)
    eps = WaveletPair(
        rng.standard_normal((batch, half)) * sigma.low,
        rng.standard_normal((batch, half)) * sigma.high,
    )
    x_t = forward_diffuse(x0, t, eps, schedule)
    mel_batch = np.stack([m.channels_first() for m in mels])

    with ag.new_graph() as graph:
        prediction = model(x_t.stack(), t, mel_batch, max_step=schedule.T)
        low_hat, high_hat = ag.split_channels(prediction, 1)
        low_hat = ag.reshape(low_hat, (batch, half))
        high_hat = ag.reshape(high_hat, (batch, half))
        losses = final_loss(
            (eps.low, eps.high),
            (low_hat, high_hat),
            (sigma.low, sigma.high),
            lam,
            mag_config,
        )
        ag.backward(losses.total, graph)
    return TrainStepResult(losses, t, eps, sigma)


def sample(
    model: FreGrad,
    mel: MelSpectrogram,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    prior: Optional[PriorVariance] = None,
    separate_prior: bool = True,
    sigma_min: float = DEFAULT_SIGMA_MIN,
    trace_dir: Optional[Union[str, Path]] = None,
    progress: Optional[Callable[[int], None]] = None,
) -> Waveform:
    """
    Generate a waveform of mel.n_frames * hop_length samples.

    x_T is drawn from the prior, then reverse_step runs from T down to 1
    without recording gradients. With trace_dir set, every x_t (T..0)
    is written there as an FGR1 matrix [2, L/2].
    """
    half = mel.n_frames * model.config.upsample_factor
    if 2 * half != mel.n_frames * mel.hop_length:
        raise ValueError(
            f"Mel hop {mel.hop_length} does not match the upsampler "
            f"(2 x {model.config.upsample_factor})"
        )
    if prior is None:
        prior = build_prior(mel, half, separate_prior, sigma_min)
    if len(prior) != half:
        raise ValueError(f"Prior covers {len(prior)} samples, expected {half}")

    trace = Path(trace_dir) if trace_dir is not None else None
    if trace is not None:
        trace.mkdir(parents=True, exist_ok=True)

    conditioner = mel.channels_first()
    x = sample_prior_noise(prior, rng)
    if trace is not None:
        write_matrix(trace / f"x_{schedule.T:04d}.fgr", x.stack())

    with ag.no_grad():
        for t in range(schedule.T, 0, -1):
            predicted = model(x.stack(), t, conditioner, max_step=schedule.T).data
            x = reverse_step(x, t, WaveletPair.unstack(predicted), schedule, rng, prior)
            if trace is not None:
                write_matrix(trace / f"x_{t - 1:04d}.fgr", x.stack())
            if progress is not None:
                progress(t)

    return Waveform(haar_idwt(x), mel.sample_rate)
