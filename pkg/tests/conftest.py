"""
Pytest configuration and shared fixtures for fregrad-vocoder tests.
"""

import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

# Add src directory to path so we can import modules
src_path = os.path.join(os.path.dirname(__file__), "..", "src")
sys.path.insert(0, src_path)

from fregrad_vocoder import autograd as ag
from fregrad_vocoder.config import RunConfig
from fregrad_vocoder.dsp import Waveform, write_wav

SAMPLE_RATE = 22050


@pytest.fixture(autouse=True)
def reset_numerics():
    """Every test starts in double precision without NaN trapping."""
    ag.set_default_dtype("float64")
    ag.set_debug(False)
    yield
    ag.set_default_dtype("float64")
    ag.set_debug(False)


@pytest.fixture
def cli_runner():
    """Provide a Click CLI runner for testing."""
    return CliRunner()


@pytest.fixture
def temp_dir():
    """Provide a temporary directory that gets cleaned up after test."""
    temp_dir = tempfile.mkdtemp()
    yield temp_dir
    shutil.rmtree(temp_dir, ignore_errors=True)


def tone(freq, seconds=1.0, amplitude=0.5, sample_rate=SAMPLE_RATE, length=None):
    """A pure sine; length (samples) overrides seconds."""
    n = length if length is not None else int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    return amplitude * np.sin(2 * np.pi * freq * t)


@pytest.fixture
def make_tone():
    """Factory for pure sine signals."""
    return tone


@pytest.fixture
def toy_config_dict():
    """A tiny model and short crops, fast enough for unit tests."""
    return {
        "model": {
            "n_blocks": 4,
            "hidden_dim": 8,
            "dilation_cycle": 2,
            "timestep_embed_dim": 16,
            "embed_hidden_dim": 32,
        },
        "optimizer": {"batch_size": 2, "lr": 0.002},
        "data": {"segment_length": 4096},
        "training": {"max_steps": 3, "checkpoint_interval": 2, "log_interval": 1, "seed": 7},
    }


@pytest.fixture
def toy_config(toy_config_dict):
    return RunConfig.from_dict(toy_config_dict)


@pytest.fixture
def wav_dir(temp_dir):
    """A dataset directory with two short tones."""
    path = Path(temp_dir) / "wavs"
    path.mkdir()
    write_wav(path / "a_220.wav", Waveform(tone(220.0, length=6000), SAMPLE_RATE))
    write_wav(path / "b_330.wav", Waveform(tone(330.0, length=3000), SAMPLE_RATE))
    return path


@pytest.fixture
def toy_config_file(temp_dir, toy_config_dict, wav_dir):
    """The toy config written as YAML and pointing at wav_dir."""
    import yaml

    data = dict(toy_config_dict)
    data["data"] = dict(data["data"], paths=[str(wav_dir)])
    path = Path(temp_dir) / "toy.yaml"
    with open(path, "w") as f:
        yaml.safe_dump(data, f)
    return path
