#!/usr/bin/env python3
"""
Objective evaluation metrics

MAE, multi-resolution STFT error, mel-cepstral distortion over
coefficients 1..13, f0 RMSE from a normalised-autocorrelation pitch
tracker, and real-time factor timing. All metrics except the timing are
deterministic functions of their inputs.
"""

import csv
import io
import logging
import math
import os
import platform
import statistics
import time
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Sequence, TextIO, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct

from .dsp import DEFAULT_SAMPLE_RATE, mel_spectrogram
from .loss import MagLossConfig, mag_loss

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["file", "mae", "mr_stft", "mcd13", "rmse_f0", "rtf"]

MCD_SCALE = 10.0 / math.log(10.0) * math.sqrt(2.0)
N_CEPSTRA = 13

F0_MIN = 70.0
F0_MAX = 400.0
VOICING_THRESHOLD = 0.45
F0_FRAME_LENGTH = 1024
F0_HOP_LENGTH = 256


def _aligned(x, y) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    y = np.asarray(getattr(y, "samples", y), dtype=np.float64)
    n = min(x.shape[-1], y.shape[-1])
    if n == 0:
        raise ValueError("Cannot compare empty signals")
    return x[..., :n], y[..., :n]


def mae(x, y) -> float:
    """Mean absolute sample error after cropping to the shorter signal."""
    x, y = _aligned(x, y)
    return float(np.mean(np.abs(x - y)))


def mr_stft_error(x, y, config: Optional[MagLossConfig] = None) -> float:
    """The magnitude loss evaluated on two waveforms."""
    x, y = _aligned(x, y)
    return mag_loss(x, y, config).item()


def mel_cepstrum(log_mel: np.ndarray, n_coefficients: int = N_CEPSTRA + 1) -> np.ndarray:
    """Orthonormal DCT-II of each log-mel frame; keeps c0..c(n-1)."""
    return dct(np.asarray(log_mel, dtype=np.float64), type=2, norm="ortho", axis=-1)[
        ..., :n_coefficients
    ]


def mel_cepstral_distortion(cx: np.ndarray, cy: np.ndarray) -> float:
    """
    Frame-mean MCD in dB over coefficients 1..13 (c0 excluded).

    Both cepstra are [frames, >= 14] and already frame-aligned.
    """
    cx, cy = np.asarray(cx), np.asarray(cy)
    if cx.shape != cy.shape:
        raise ValueError(f"Cepstra differ in shape: {cx.shape} vs {cy.shape}")
    if cx.shape[0] == 0:
        raise ValueError("MCD needs at least one frame")
    diff = cx[:, 1 : N_CEPSTRA + 1] - cy[:, 1 : N_CEPSTRA + 1]
    return float(np.mean(MCD_SCALE * np.sqrt(np.sum(diff * diff, axis=1))))


def mcd13(x, y, sample_rate: int = DEFAULT_SAMPLE_RATE) -> float:
    """MCD13 between two waveforms, frame-synchronous (no time warping)."""
    x, y = _aligned(x, y)
    cx = mel_cepstrum(mel_spectrogram(x, sample_rate).frames)
    cy = mel_cepstrum(mel_spectrogram(y, sample_rate).frames)
    return mel_cepstral_distortion(cx, cy)


def estimate_f0(
    signal,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    frame_length: int = F0_FRAME_LENGTH,
    hop_length: int = F0_HOP_LENGTH,
    fmin: float = F0_MIN,
    fmax: float = F0_MAX,
    threshold: float = VOICING_THRESHOLD,
) -> np.ndarray:
    """
    Frame-wise f0 in Hz; NaN marks unvoiced frames.

    A frame is voiced when its peak normalised autocorrelation over lags
    sample_rate/fmax .. sample_rate/fmin reaches `threshold`. The peak lag
    is refined by parabolic interpolation.
    """
    x = np.asarray(getattr(signal, "samples", signal), dtype=np.float64)
    min_lag = int(math.floor(sample_rate / fmax))
    max_lag = int(math.ceil(sample_rate / fmin))
    if frame_length <= max_lag + 1:
        raise ValueError(f"frame_length {frame_length} too short for fmin {fmin} Hz")
    if x.shape[-1] < frame_length:
        x = np.pad(x, (0, frame_length - x.shape[-1]))
    frames = sliding_window_view(x, frame_length)[::hop_length]
    frames = frames - frames.mean(axis=1, keepdims=True)

    lags = np.arange(min_lag - 1, max_lag + 2)
    corr = np.zeros((frames.shape[0], lags.size))
    energy = np.cumsum(np.concatenate([np.zeros((frames.shape[0], 1)), frames**2], axis=1), axis=1)
    total = energy[:, -1]
    for i, lag in enumerate(lags):
        head = frames[:, : frame_length - lag]
        tail = frames[:, lag:]
        numerator = np.sum(head * tail, axis=1)
        denominator = np.sqrt(energy[:, frame_length - lag] * (total - energy[:, lag]))
        corr[:, i] = np.where(denominator > 1e-12, numerator / np.maximum(denominator, 1e-12), 0.0)

    f0 = np.full(frames.shape[0], np.nan)
    inner = corr[:, 1:-1]
    peaks = np.argmax(inner, axis=1) + 1
    for n, p in enumerate(peaks):
        if corr[n, p] < threshold:
            continue
        left, centre, right = corr[n, p - 1], corr[n, p], corr[n, p + 1]
        curvature = left - 2.0 * centre + right
        offset = 0.5 * (left - right) / curvature if curvature < 0 else 0.0
        f0[n] = sample_rate / (lags[p] + offset)
    return f0


def rmse_f0(x, y, sample_rate: int = DEFAULT_SAMPLE_RATE) -> Optional[float]:
    """
    f0 RMSE over frames voiced in both signals.

    Returns None (undefined) when no frame is voiced in both.
    """
    x, y = _aligned(x, y)
    fx = estimate_f0(x, sample_rate)
    fy = estimate_f0(y, sample_rate)
    both = ~np.isnan(fx) & ~np.isnan(fy)
    if not np.any(both):
        return None
    return float(np.sqrt(np.mean((fx[both] - fy[both]) ** 2)))


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------


def hardware_descriptor() -> str:
    cpu = platform.processor() or platform.machine() or "unknown-cpu"
    return f"{cpu} ({os.cpu_count() or 1} cores, {platform.system()})"


@dataclass
class RtfReport:
    run_seconds: List[float]
    audio_duration: float
    hardware: str = field(default_factory=hardware_descriptor)

    @property
    def median_seconds(self) -> float:
        return statistics.median(self.run_seconds)

    @property
    def rtf(self) -> float:
        return self.median_seconds / self.audio_duration

    def __str__(self) -> str:
        return f"RTF {self.rtf:.4f} (median of {len(self.run_seconds)} runs on {self.hardware})"


def measure_rtf(sampler: Callable[[], Any], audio_duration: float, runs: int = 3) -> RtfReport:
    """
    Time `sampler` `runs` times; RTF is the median wall time over audio_duration.

    Raises:
        ValueError: if audio_duration <= 0 or fewer than 3 runs are requested
    """
    if not audio_duration > 0:
        raise ValueError(f"audio_duration must be > 0, got {audio_duration}")
    if runs < 3:
        raise ValueError(f"RTF needs at least 3 runs, got {runs}")
    times = []
    for _ in range(runs):
        start = time.perf_counter()
        sampler()
        times.append(time.perf_counter() - start)
    report = RtfReport(times, audio_duration)
    logger.debug(f"Measured {report}")
    return report


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    mae: float
    mr_stft: float
    mcd13: float
    rmse_f0: Optional[float]
    rtf: Optional[float] = None

    def row(self, name: str) -> List[str]:
        return [name] + [_cell(getattr(self, c)) for c in METRIC_COLUMNS[1:]]


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def evaluate_pair(reference, generated, sample_rate: int = DEFAULT_SAMPLE_RATE) -> MetricReport:
    """Every metric for one (reference, generated) pair; rtf is left unset."""
    ref_rate = getattr(reference, "sample_rate", sample_rate)
    gen_rate = getattr(generated, "sample_rate", sample_rate)
    if ref_rate != gen_rate:
        raise ValueError(f"Sample rates differ: {ref_rate} vs {gen_rate}")
    return MetricReport(
        mae=mae(reference, generated),
        mr_stft=mr_stft_error(reference, generated),
        mcd13=mcd13(reference, generated, ref_rate),
        rmse_f0=rmse_f0(reference, generated, ref_rate),
    )


def mean_report(reports: Sequence[MetricReport]) -> MetricReport:
    """Column means; a column with no defined values stays undefined."""

    def column_mean(name):
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        return float(np.mean(values)) if values else None

    return MetricReport(*(column_mean(c) for c in METRIC_COLUMNS[1:]))


def write_metrics_csv(
    rows: Sequence[Tuple[str, MetricReport]], stream: Optional[TextIO] = None
) -> str:
    """One row per file then a `mean` row; returns the CSV text."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for name, report in rows:
        writer.writerow(report.row(name))
    if rows:
        writer.writerow(mean_report([r for _, r in rows]).row("mean"))
    text = buffer.getvalue()
    if stream is not None:
        stream.write(text)
    return text
