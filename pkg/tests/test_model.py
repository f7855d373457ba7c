"""
Tests for the denoiser network and its building blocks.
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from fregrad_vocoder import autograd as ag
from fregrad_vocoder.model import (
    Conv1d,
    DiffusionEmbedding,
    FreGrad,
    FreqDConv,
    MelUpsampler,
    ModelConfig,
    ResidualBlock,
    sinusoid,
    timestep_embedding,
)

FULL_SIZE_PARAMETERS = 1_782_452


@pytest.fixture
def toy_model_config(toy_config):
    return toy_config.model


def random_inputs(config, rng, batch=2, frames=2):
    pair = rng.standard_normal((batch, 2, frames * config.upsample_factor))
    mel = rng.normal(-4.0, 1.0, (batch, config.mel_bins, frames))
    return pair, mel


@pytest.mark.unit
class TestModelConfig:
    def test_dilation_cycle(self):
        config = ModelConfig()
        assert [config.dilation(i) for i in range(8)] == [1, 2, 4, 8, 16, 32, 64, 1]

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_blocks": 0},
            {"kernel_size": 4},
            {"upsample_strides": (16, 16)},
            {"timestep_embed_dim": 7},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ModelConfig(**kwargs)


@pytest.mark.unit
class TestTimestepEmbedding:
    def test_raw_sinusoid_at_zero(self):
        code = sinusoid(0, 128)
        assert code.shape == (128,)
        assert_array_equal(code[:64], 0.0)
        assert_array_equal(code[64:], 1.0)

    def test_distinct_over_schedule(self, toy_model_config):
        embedding = DiffusionEmbedding(toy_model_config, np.random.default_rng(0))
        vectors = np.stack([timestep_embedding(embedding, t, 50) for t in range(1, 51)])
        assert vectors.shape == (50, toy_model_config.embed_hidden_dim)
        distances = np.linalg.norm(vectors[:, None] - vectors[None], axis=-1)
        assert np.all(distances[~np.eye(50, dtype=bool)] > 1e-8)

    def test_default_width_is_embed_hidden_dim(self):
        """The 128-wide sinusoid widens to 512 through the two dense layers."""
        config = ModelConfig()
        embedding = DiffusionEmbedding(config, np.random.default_rng(0))
        vector = timestep_embedding(embedding, 1, 50)
        assert config.timestep_embed_dim == 128
        assert vector.shape == (config.embed_hidden_dim,) == (512,)
        assert embedding.projection1.weight.size == 128 * 512
        assert embedding.projection2.weight.size == 512 * 512

    @pytest.mark.parametrize("t", [0, 51, 2.5])
    def test_out_of_range(self, t, toy_model_config):
        embedding = DiffusionEmbedding(toy_model_config, np.random.default_rng(0))
        with pytest.raises(ValueError):
            timestep_embedding(embedding, t, 50)


@pytest.mark.unit
class TestUpsampler:
    @pytest.mark.parametrize("frames", [1, 3])
    def test_length(self, frames):
        config = ModelConfig()
        upsampler = MelUpsampler(config, np.random.default_rng(0))
        out = upsampler(np.zeros((1, 80, frames)))
        assert out.shape == (1, 80, frames * 128)

    def test_parameter_count(self):
        assert MelUpsampler(ModelConfig(), np.random.default_rng(0)).num_parameters() == 50


@pytest.mark.unit
class TestFreqDConv:
    def test_zero_input(self):
        layer = FreqDConv(4, 8, 3, 2, np.random.default_rng(0))
        out = layer(np.zeros((1, 4, 32)))
        assert out.shape == (1, 8, 32)
        assert np.all(out.data == 0.0)

    def test_hidden_shapes(self):
        layer = FreqDConv(32, 32, 3, 1, np.random.default_rng(0))
        assert layer.conv.weight.shape == (64, 64, 3)
        assert layer(np.ones((32, 64))).shape == (32, 64)

    def test_odd_length(self):
        with pytest.raises(ValueError, match="even length"):
            FreqDConv(2, 2, 3, 1, np.random.default_rng(0))(np.zeros((2, 7)))

    @pytest.mark.parametrize("dilation", [1, 2, 4])
    def test_receptive_field(self, dilation):
        """An impulse reaches about twice as far as through a plain dilated conv."""
        rng = np.random.default_rng(dilation)
        channels, length, p = 3, 128, 64
        impulse = np.zeros((channels, length))
        impulse[:, p] = 1.0

        def reach(layer):
            response = np.abs(layer(impulse).data).sum(axis=0)
            touched = np.nonzero(response > 1e-12)[0]
            return int(np.max(np.abs(touched - p)))

        plain = reach(Conv1d(channels, channels, 3, rng, dilation))
        wavelet = reach(FreqDConv(channels, channels, 3, dilation, rng))
        assert plain == dilation
        assert wavelet <= 2 * dilation + 1
        assert wavelet >= 1.5 * plain


@pytest.mark.unit
class TestResidualBlock:
    def test_zero_output_projection(self, toy_model_config):
        rng = np.random.default_rng(0)
        block = ResidualBlock(toy_model_config, 1, rng)
        block.output_projection.weight.data[:] = 0.0
        x = ag.Tensor(rng.standard_normal((1, 8, 64)))
        step = ag.Tensor(rng.standard_normal((1, toy_model_config.embed_hidden_dim)))
        conditioner = ag.Tensor(rng.standard_normal((1, 80, 64)))
        residual, skip = block(x, step, conditioner)
        assert_allclose(residual.data, x.data / math.sqrt(2.0))
        assert skip.shape == (1, 8, 64)

    def test_conditioner_receives_gradient(self, toy_model_config):
        rng = np.random.default_rng(1)
        block = ResidualBlock(toy_model_config, 2, rng)
        x = ag.Tensor(rng.standard_normal((1, 8, 32)))
        step = ag.Tensor(rng.standard_normal((1, toy_model_config.embed_hidden_dim)))
        conditioner = ag.Tensor(rng.standard_normal((1, 80, 32)))
        with ag.new_graph() as graph:
            residual, skip = block(x, step, conditioner)
            ag.backward(ag.sum_all(ag.square(residual + skip)), graph)
        assert np.any(block.conditioner_projection.weight.grad != 0.0)


@pytest.mark.unit
class TestFreGrad:
    def test_output_shape_and_zero_init(self, toy_model_config):
        rng = np.random.default_rng(0)
        model = FreGrad(toy_model_config, rng)
        pair, mel = random_inputs(toy_model_config, rng)
        out = model(pair, np.array([1, 5]), mel)
        assert out.shape == pair.shape
        assert np.all(out.data == 0.0)

    def test_unbatched(self, toy_model_config):
        rng = np.random.default_rng(0)
        model = FreGrad(toy_model_config, rng)
        pair, mel = random_inputs(toy_model_config, rng, batch=1)
        assert model(pair[0], 3, mel[0]).shape == (2, 256)

    def test_deterministic(self, toy_model_config):
        pair, mel = random_inputs(toy_model_config, np.random.default_rng(9))
        outputs = []
        for _ in range(2):
            model = FreGrad(toy_model_config, np.random.default_rng(4))
            model.output_projection.weight.data[:] = 0.1
            outputs.append(model(pair, 7, mel).data)
        assert_array_equal(outputs[0], outputs[1])

    def test_length_mismatch(self, toy_model_config):
        rng = np.random.default_rng(0)
        model = FreGrad(toy_model_config, rng)
        pair, mel = random_inputs(toy_model_config, rng)
        with pytest.raises(ValueError, match="mel frames"):
            model(pair[:, :, :200], 1, mel)
        with pytest.raises(ValueError, match="timesteps"):
            model(pair, np.array([1, 2, 3]), mel)
        with pytest.raises(ValueError, match="outside"):
            model(pair, 51, mel, max_step=50)

    def test_full_size_parameter_count(self):
        model = FreGrad(ModelConfig(), np.random.default_rng(0))
        total = model.num_parameters()
        assert total == FULL_SIZE_PARAMETERS
        assert 1.25e6 <= total <= 2.31e6
        counts = model.parameter_counts()
        assert sum(counts.values()) == total
        assert counts["upsampler"] == 50

    def test_without_freq_dconv(self):
        config = ModelConfig()
        plain = FreGrad(config, np.random.default_rng(0), freq_dconv=False)
        assert isinstance(plain.blocks[0].dilated_conv, Conv1d)
        assert plain.blocks[0].dilated_conv.weight.shape == (64, 32, 3)
        per_block = 128 * 64 * 3 - 64 * 32 * 3 + 128 - 64
        assert FULL_SIZE_PARAMETERS - plain.num_parameters() == 30 * per_block

    def test_state_dict_round_trip(self, toy_model_config):
        source = FreGrad(toy_model_config, np.random.default_rng(1))
        target = FreGrad(toy_model_config, np.random.default_rng(2))
        target.load_state_dict(source.state_dict())
        for (name, a), (_, b) in zip(source.named_parameters(), target.named_parameters()):
            assert_array_equal(a.data, b.data, err_msg=name)

    def test_state_dict_mismatch(self, toy_model_config):
        model = FreGrad(toy_model_config, np.random.default_rng(1))
        state = model.state_dict()
        state.pop("skip_projection.bias")
        with pytest.raises(ValueError, match="missing"):
            model.load_state_dict(state)

    @pytest.mark.parametrize("seed", [3, 11, 29])
    def test_gradients_match_finite_differences(self, toy_model_config, seed):
        """Check a few entries of every parameter against central differences."""
        rng = np.random.default_rng(seed)
        model = FreGrad(toy_model_config, rng)
        model.output_projection.weight.data[:] = rng.normal(0, 0.3, model.output_projection.weight.shape)
        pair, mel = random_inputs(toy_model_config, rng, batch=1, frames=4)
        assert pair.shape[-1] == 512
        target = rng.standard_normal(pair.shape)
        eps = 1e-5

        def loss():
            return ag.mean(ag.square(model(pair, 4, mel) - target))

        model.zero_grad()
        with ag.new_graph() as graph:
            ag.backward(loss(), graph)

        def central_difference(flat, index):
            original = flat[index]
            with ag.no_grad():
                flat[index] = original + eps
                plus = loss().item()
                flat[index] = original - eps
                minus = loss().item()
            flat[index] = original
            return (plus - minus) / (2 * eps)

        for name, param in model.named_parameters():
            flat = param.data.reshape(-1)
            for index in rng.choice(flat.size, size=min(3, flat.size), replace=False):
                analytic = param.grad.reshape(-1)[index]
                numeric = central_difference(flat, index)
                scale = max(abs(analytic), abs(numeric))
                error = abs(analytic - numeric) / scale if scale else 0.0
                assert error < 1e-4, f"{name}[{index}]: {analytic} vs {numeric}"
