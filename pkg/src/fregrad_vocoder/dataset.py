#!/usr/bin/env python3
"""
Training data

WAV files found under the configured paths (sorted by name), random
fixed-length crops, and mel features computed on the fly from each crop.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from .config import DataConfig
from .dsp import MelSpectrogram, Waveform, mel_spectrogram, read_wav
from .errors import DatasetError, WavFormatError

logger = logging.getLogger(__name__)


def find_wav_files(paths: Sequence[Union[str, Path]]) -> List[Path]:
    """
    Collect *.wav files from directories (non-recursive) and explicit file paths.

    Raises:
        DatasetError: if a path does not exist or no WAV file is found
    """
    if not paths:
        raise DatasetError("No dataset paths configured (data.paths is empty)")
    found = []
    for entry in paths:
        path = Path(entry)
        if path.is_dir():
            found.extend(sorted(p for p in path.glob("*.wav") if p.is_file()))
        elif path.is_file():
            found.append(path)
        else:
            raise DatasetError(f"Dataset path not found: {path}")
    if not found:
        raise DatasetError(
            "No .wav files found in " + ", ".join(str(p) for p in paths)
        )
    return sorted(found, key=lambda p: (p.name, str(p)))


@dataclass
class Batch:
    waveforms: np.ndarray
    mels: List[MelSpectrogram]
    names: List[str]


class AudioDataset:
    """Random-crop sampler over a fixed, sorted list of WAV files."""

    def __init__(self, config: DataConfig, paths: Sequence[Union[str, Path]] = None):
        self.config = config
        files = find_wav_files(paths if paths is not None else config.paths)
        if config.holdout:
            if config.holdout >= len(files):
                raise DatasetError(
                    f"data.holdout={config.holdout} leaves no training files "
                    f"(found {len(files)})"
                )
            self.train_files = files[: -config.holdout]
            self.holdout_files = files[-config.holdout :]
        else:
            self.train_files = files
            self.holdout_files = []
        self._cache: Dict[Path, Waveform] = {}
        logger.info(
            f"Dataset: {len(self.train_files)} training files, "
            f"{len(self.holdout_files)} held out"
        )
        for path in self.holdout_files:
            logger.info(f"Held out: {path.name}")

    def __len__(self) -> int:
        return len(self.train_files)

    def load(self, index: int) -> Waveform:
        path = self.train_files[index]
        if path not in self._cache:
            waveform = read_wav(path)
            if waveform.sample_rate != self.config.sample_rate:
                raise WavFormatError(
                    f"{path}: sample rate {waveform.sample_rate} Hz, "
                    f"expected {self.config.sample_rate} Hz"
                )
            self._cache[path] = waveform
        return self._cache[path]

    def crop(self, samples: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Random window of segment_length samples; shorter clips are zero-padded."""
        length = self.config.segment_length
        if samples.shape[0] > length:
            start = int(rng.integers(0, samples.shape[0] - length + 1))
            return samples[start : start + length]
        return np.pad(samples, (0, length - samples.shape[0]))

    def mel(self, segment: np.ndarray) -> MelSpectrogram:
        cfg = self.config
        return mel_spectrogram(
            segment, cfg.sample_rate, cfg.n_fft, cfg.hop_length, cfg.n_mels, cfg.fmin, cfg.fmax
        )

    def sample_batch(self, rng: np.random.Generator, batch_size: int) -> Batch:
        """Draw file indices (with replacement), then one crop per index."""
        indices = rng.integers(0, len(self.train_files), size=batch_size)
        segments = [self.crop(self.load(int(i)).samples, rng) for i in indices]
        return Batch(
            waveforms=np.stack(segments),
            mels=[self.mel(s) for s in segments],
            names=[self.train_files[int(i)].name for i in indices],
        )
