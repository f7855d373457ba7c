#!/usr/bin/env python3
"""
FreGrad denoiser network

A DiffWave-style stack of gated residual blocks operating on the
two-channel wavelet representation [low, high] of the waveform. Each
block's dilated convolution is a frequency-aware one: the hidden signal is
split into Haar sub-bands, convolved jointly, and recomposed.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """Network hyperparameters."""

    n_blocks: int = 30
    dilation_cycle: int = 7
    hidden_dim: int = 32
    timestep_embed_dim: int = 128
    embed_hidden_dim: int = 512
    mel_bins: int = 80
    upsample_factor: int = 128
    upsample_strides: Tuple[int, ...] = (16, 8)
    kernel_size: int = 3

    def __post_init__(self):
        self.upsample_strides = tuple(int(s) for s in self.upsample_strides)
        if self.n_blocks < 1:
            raise ValueError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.dilation_cycle < 1:
            raise ValueError(f"dilation_cycle must be >= 1, got {self.dilation_cycle}")
        if self.hidden_dim < 1:
            raise ValueError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.timestep_embed_dim < 2 or self.timestep_embed_dim % 2:
            raise ValueError(
                f"timestep_embed_dim must be even and >= 2, got {self.timestep_embed_dim}"
            )
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if int(np.prod(self.upsample_strides)) != self.upsample_factor:
            raise ValueError(
                f"upsample_strides {self.upsample_strides} do not multiply to "
                f"upsample_factor {self.upsample_factor}"
            )

    def dilation(self, block_index: int) -> int:
        return 2 ** (block_index % self.dilation_cycle)


# ---------------------------------------------------------------------------
# Module plumbing
# ---------------------------------------------------------------------------


class Module:
    """
    Container of Parameters and sub-modules.

    Parameters are discovered from instance attributes in assignment
    order, which fixes the checkpoint record order.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """
        Copy arrays into the parameters in place.

        Raises:
            ValueError: on missing, unexpected or mis-shaped entries
        """
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ValueError(
                f"State mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}"
            )
        for name, param in own.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise ValueError(
                    f"Shape mismatch for {name}: expected {param.shape}, got {value.shape}"
                )
            param.data = value.astype(param.data.dtype, copy=True)


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(in_features)
        self.weight = Parameter(rng.uniform(-bound, bound, (out_features, in_features)))
        self.bias = Parameter(rng.uniform(-bound, bound, out_features))

    def __call__(self, x) -> Tensor:
        return ag.linear(x, self.weight, self.bias)


class Conv1d(Module):
    """Same-padded dilated conv with Kaiming-normal weights and zero bias."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        dilation: int = 1,
        zero_init: bool = False,
    ):
        self.dilation = dilation
        shape = (out_channels, in_channels, kernel_size)
        if zero_init:
            weight = np.zeros(shape)
        else:
            weight = rng.standard_normal(shape) * math.sqrt(2.0 / (in_channels * kernel_size))
        self.weight = Parameter(weight)
        self.bias = Parameter(np.zeros(out_channels))

    def __call__(self, x) -> Tensor:
        return ag.conv1d(x, self.weight, self.bias, dilation=self.dilation)


class ConvTranspose1d(Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator):
        self.stride = stride
        kernel = 2 * stride
        bound = 1.0 / math.sqrt(kernel)
        self.weight = Parameter(rng.uniform(-bound, bound, (in_channels, out_channels, kernel)))
        self.bias = Parameter(np.zeros(out_channels))

    def __call__(self, x) -> Tensor:
        return ag.conv_transpose1d(x, self.weight, self.bias, stride=self.stride)


# ---------------------------------------------------------------------------
# Network components
# ---------------------------------------------------------------------------


def sinusoid(t: Union[int, np.ndarray], dim: int = 128) -> np.ndarray:
    """
    Raw sinusoidal code of the step index: dim/2 sines then dim/2 cosines
    of t * 10^(4j / (dim/2 - 1)).
    """
    half = dim // 2
    exponents = np.arange(half) * 4.0 / max(half - 1, 1)
    table = np.asarray(t, dtype=np.float64)[..., np.newaxis] * 10.0**exponents
    return np.concatenate([np.sin(table), np.cos(table)], axis=-1)


class DiffusionEmbedding(Module):
    """
    Step index -> sinusoid -> two dense layers with swish.

    The sinusoid has timestep_embed_dim (128) entries; both dense layers
    output embed_hidden_dim (512), so that is the width of the embedding.
    Each residual block then projects it down to hidden_dim.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.dim = config.timestep_embed_dim
        self.projection1 = Dense(config.timestep_embed_dim, config.embed_hidden_dim, rng)
        self.projection2 = Dense(config.embed_hidden_dim, config.embed_hidden_dim, rng)

    def __call__(self, t: Union[int, np.ndarray], max_step: Optional[int] = None) -> Tensor:
        steps = np.atleast_1d(np.asarray(t))
        if not np.issubdtype(steps.dtype, np.integer):
            raise ValueError(f"Timestep must be an integer, got {t!r}")
        upper = max_step if max_step is not None else np.inf
        if np.any(steps < 1) or np.any(steps > upper):
            bound = f"1..{max_step}" if max_step is not None else ">= 1"
            raise ValueError(f"Timestep {t} outside {bound}")
        x = ag.silu(self.projection1(sinusoid(steps, self.dim)))
        return ag.silu(self.projection2(x))


def timestep_embedding(
    embedding: DiffusionEmbedding, t: int, max_step: Optional[int] = None
) -> np.ndarray:
    """
    Embedding vector for a single step.

    The result has embed_hidden_dim entries (512 by default), not
    timestep_embed_dim: the 128-wide sinusoid only feeds the first dense layer.
    """
    with ag.no_grad():
        return embedding(t, max_step).data[0]


class MelUpsampler(Module):
    """
    Stretch a mel [B, n_mels, N] to [B, n_mels, N * upsample_factor].

    Every mel bin goes through the same single-channel transposed convs.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.factor = config.upsample_factor
        self.stages = [ConvTranspose1d(1, 1, s, rng) for s in config.upsample_strides]

    def __call__(self, mel) -> Tensor:
        mel = ag.as_tensor(mel)
        batch, bins, frames = mel.shape
        x = ag.reshape(mel, (batch * bins, 1, frames))
        for stage in self.stages:
            x = ag.leaky_relu(stage(x), 0.4)
        return ag.reshape(x, (batch, bins, frames * self.factor))


class FreqDConv(Module):
    """
    Dilated conv applied in the Haar domain of the hidden signal.

    [B, C_in, L] -> DWT -> [B, 2*C_in, L/2] -> conv -> [B, 2*C_out, L/2]
    -> channel halves as (low, high) -> iDWT -> [B, C_out, L]
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        dilation: int,
        rng: np.random.Generator,
    ):
        self.out_channels = out_channels
        self.conv = Conv1d(2 * in_channels, 2 * out_channels, kernel_size, rng, dilation)

    def __call__(self, y) -> Tensor:
        y = ag.as_tensor(y)
        if y.shape[-1] % 2:
            raise ValueError(f"Freq-DConv needs an even length, got {y.shape[-1]}")
        low, high = ag.dwt_channelwise(y)
        hidden = self.conv(ag.concat_channels(low, high))
        out_low, out_high = ag.split_channels(hidden, self.out_channels)
        return ag.idwt_channelwise(out_low, out_high)


class ResidualBlock(Module):
    def __init__(
        self,
        config: ModelConfig,
        dilation: int,
        rng: np.random.Generator,
        freq_dconv: bool = True,
    ):
        channels = config.hidden_dim
        self.channels = channels
        self.dilation = dilation
        self.diffusion_projection = Dense(config.embed_hidden_dim, channels, rng)
        self.conditioner_projection = Conv1d(config.mel_bins, 2 * channels, 1, rng)
        if freq_dconv:
            self.dilated_conv = FreqDConv(channels, 2 * channels, config.kernel_size, dilation, rng)
        else:
            self.dilated_conv = Conv1d(channels, 2 * channels, config.kernel_size, rng, dilation)
        self.output_projection = Conv1d(channels, 2 * channels, 1, rng)

    def __call__(self, x: Tensor, step_embedding: Tensor, conditioner: Tensor):
        batch = x.shape[0]
        step = ag.reshape(self.diffusion_projection(step_embedding), (batch, self.channels, 1))
        y = self.dilated_conv(ag.add(x, step))
        y = ag.add(y, self.conditioner_projection(conditioner))

        gate, filt = ag.split_channels(y, self.channels)
        y = ag.mul(ag.sigmoid(gate), ag.tanh(filt))

        residual, skip = ag.split_channels(self.output_projection(y), self.channels)
        return ag.scale(ag.add(x, residual), 1.0 / math.sqrt(2.0)), skip


class FreGrad(Module):
    """
    Noise predictor eps_theta(x_t, t, mel).

    Input and output are the stacked wavelet pair [B, 2, L/2] (or [2, L/2]);
    channel 0 is the low band, channel 1 the high band.
    """

    def __init__(
        self,
        config: Optional[ModelConfig] = None,
        rng: Optional[np.random.Generator] = None,
        freq_dconv: bool = True,
    ):
        self.config = config or ModelConfig()
        self.freq_dconv = freq_dconv
        rng = rng if rng is not None else np.random.default_rng(0)
        cfg = self.config
        self.input_projection = Conv1d(2, cfg.hidden_dim, 1, rng)
        self.diffusion_embedding = DiffusionEmbedding(cfg, rng)
        self.upsampler = MelUpsampler(cfg, rng)
        self.blocks = [
            ResidualBlock(cfg, cfg.dilation(i), rng, freq_dconv) for i in range(cfg.n_blocks)
        ]
        self.skip_projection = Conv1d(cfg.hidden_dim, cfg.hidden_dim, 1, rng)
        self.output_projection = Conv1d(cfg.hidden_dim, 2, 1, rng, zero_init=True)
        logger.debug(
            f"Built FreGrad: {cfg.n_blocks} blocks, D={cfg.hidden_dim}, "
            f"freq_dconv={freq_dconv}, {self.num_parameters()} parameters"
        )

    def parameter_counts(self) -> Dict[str, int]:
        """Parameter count per top-level component."""
        counts: Dict[str, int] = {}
        for name, param in self.named_parameters():
            component = name.split(".")[0]
            counts[component] = counts.get(component, 0) + param.size
        return counts

    def __call__(
        self,
        noisy_pair,
        t: Union[int, np.ndarray],
        mel,
        max_step: Optional[int] = None,
    ) -> Tensor:
        """
        Predict the prior-shaped noise of both sub-bands.

        Args:
            noisy_pair: [B, 2, L/2] or [2, L/2]
            t: one step for the whole batch or one per batch element
            mel: [B, n_mels, N] or [n_mels, N], with L/2 == N * upsample_factor
            max_step: upper bound for t (the schedule length), if known

        Raises:
            ValueError: on shape or length mismatch, or t out of range
        """
        x = ag.as_tensor(noisy_pair)
        mel = ag.as_tensor(mel)
        squeezed = x.ndim == 2
        if squeezed:
            x = ag.reshape(x, (1,) + x.shape)
        if mel.ndim == 2:
            mel = ag.reshape(mel, (1,) + mel.shape)
        batch, channels, length = x.shape
        cfg = self.config
        if channels != 2:
            raise ValueError(f"Expected a 2-channel wavelet pair, got {channels} channels")
        if mel.shape[0] != batch or mel.shape[1] != cfg.mel_bins:
            raise ValueError(f"Mel shape {mel.shape} does not match batch {batch} x {cfg.mel_bins} bins")
        if length != mel.shape[2] * cfg.upsample_factor:
            raise ValueError(
                f"Sub-band length {length} != {mel.shape[2]} mel frames x {cfg.upsample_factor}"
            )

        steps = np.asarray(t)
        if steps.ndim == 0:
            steps = np.full(batch, steps)
        if steps.shape != (batch,):
            raise ValueError(f"Expected {batch} timesteps, got shape {steps.shape}")

        h = ag.relu(self.input_projection(x))
        step_embedding = self.diffusion_embedding(steps, max_step)
        conditioner = self.upsampler(mel)

        skip_sum = None
        for block in self.blocks:
            h, skip = block(h, step_embedding, conditioner)
            skip_sum = skip if skip_sum is None else ag.add(skip_sum, skip)

        h = ag.scale(skip_sum, 1.0 / math.sqrt(len(self.blocks)))
        h = ag.relu(self.skip_projection(h))
        out = self.output_projection(h)
        if squeezed:
            out = ag.reshape(out, out.shape[1:])
        return out
