#!/usr/bin/env python3
"""
Diffusion noise schedule

Linear beta schedule, cumulative signal retention gamma, SNR trajectories
and the zero-terminal-SNR rescaling of sqrt(gamma).

Timesteps are 1-based (t in 1..T). Arrays are stored 0-based, so step t
lives at index t - 1. Downstream code should go through the accessor
methods rather than index the arrays directly.
"""

import csv
import io
import logging
from dataclasses import dataclass
from typing import List, Optional, TextIO

import numpy as np

logger = logging.getLogger(__name__)

SCHEDULE_CSV_COLUMNS = [
    "t",
    "beta",
    "gamma",
    "sqrt_gamma_rescaled",
    "snr",
    "snr_rescaled",
    "log10_snr",
    "log10_snr_rescaled",
]


def linear_beta(T: int, beta_start: float, beta_end: float) -> np.ndarray:
    """beta[t] linearly interpolated from beta_start (t=1) to beta_end (t=T)."""
    if T < 1:
        raise ValueError(f"Number of diffusion steps must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"Need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    if T == 1:
        return np.array([beta_start], dtype=np.float64)
    return np.linspace(beta_start, beta_end, T, dtype=np.float64)


def gamma_from_beta(beta: np.ndarray) -> np.ndarray:
    """gamma[t] = prod_{i<=t} (1 - beta[i])."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 1 or beta.size == 0:
        raise ValueError("beta must be a non-empty 1-D sequence")
    if np.any(beta <= 0.0) or np.any(beta >= 1.0):
        raise ValueError("Every beta must lie in (0, 1)")
    return np.cumprod(1.0 - beta)


def rescale_zero_snr(gamma: np.ndarray, tau: float) -> np.ndarray:
    """
    Affine map of sqrt(gamma) that drives the terminal SNR towards zero.

    sqrt_new[t] = sqrt_g[1] / (sqrt_g[1] - sqrt_g[T] + tau) * (sqrt_g[t] - sqrt_g[T] + tau)

    The first entry is a fixed point; the last becomes
    tau * sqrt_g[1] / (sqrt_g[1] - sqrt_g[T] + tau).

    Raises:
        ValueError: if tau <= 0 (the denominator guard) or gamma is not
            strictly decreasing inside (0, 1)
    """
    if not tau > 0.0:
        raise ValueError(
            f"tau must be > 0 to guard the rescaling against division by zero, got {tau}"
        )
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.ndim != 1 or gamma.size == 0:
        raise ValueError("gamma must be a non-empty 1-D sequence")
    if np.any(gamma <= 0.0) or np.any(gamma >= 1.0):
        raise ValueError("Every gamma must lie in (0, 1)")
    if np.any(np.diff(gamma) >= 0.0):
        raise ValueError("gamma must be strictly decreasing")

    sqrt_gamma = np.sqrt(gamma)
    first, last = sqrt_gamma[0], sqrt_gamma[-1]
    scale = first / (first - last + tau)
    rescaled = scale * (sqrt_gamma - last + tau)
    # the affine map is exact at t=1 only up to roundoff
    rescaled[0] = first
    return rescaled


def snr(gamma_like: np.ndarray) -> np.ndarray:
    """Per-step SNR gamma / (1 - gamma)."""
    gamma = np.asarray(gamma_like, dtype=np.float64)
    if np.any(gamma >= 1.0):
        raise ValueError("SNR is infinite where gamma == 1")
    if np.any(gamma <= 0.0):
        raise ValueError("gamma must be > 0 for a finite log-SNR")
    return gamma / (1.0 - gamma)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """
    Immutable diffusion schedule.

    Attributes:
        beta: Original per-step beta (diagnostics only once rescaled)
        gamma: Original cumulative product of (1 - beta)
        sqrt_gamma_rescaled: sqrt(gamma_new); equals sqrt(gamma) when
            zero_snr is off
        tau: Rescaling offset
        zero_snr: Whether the zero-terminal-SNR rescaling was applied
    """

    beta: np.ndarray
    gamma: np.ndarray
    sqrt_gamma_rescaled: np.ndarray
    tau: float
    zero_snr: bool = True

    @classmethod
    def build(
        cls,
        T: int = 50,
        beta_start: float = 1e-4,
        beta_end: float = 0.05,
        tau: float = 1e-4,
        zero_snr: bool = True,
    ) -> "NoiseSchedule":
        """Construct the linear schedule, rescaled unless zero_snr is False."""
        beta = linear_beta(T, beta_start, beta_end)
        gamma = gamma_from_beta(beta)
        if zero_snr:
            sqrt_rescaled = rescale_zero_snr(gamma, tau)
        else:
            sqrt_rescaled = np.sqrt(gamma)
        for array in (beta, gamma, sqrt_rescaled):
            array.setflags(write=False)
        logger.debug(
            f"Built schedule T={T} beta=[{beta_start}, {beta_end}] tau={tau} "
            f"zero_snr={zero_snr}"
        )
        return cls(beta, gamma, sqrt_rescaled, tau, zero_snr)

    @property
    def T(self) -> int:
        return self.beta.shape[0]

    @property
    def gamma_new(self) -> np.ndarray:
        """gamma actually used for diffusion, training and sampling."""
        return self.sqrt_gamma_rescaled**2

    @property
    def beta_tilde(self) -> np.ndarray:
        """Per-step beta re-derived from gamma_new: 1 - gamma_new[t] / gamma_new[t-1]."""
        gamma_new = self.gamma_new
        previous = np.concatenate([[1.0], gamma_new[:-1]])
        return 1.0 - gamma_new / previous

    def _check_step(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise ValueError(f"Timestep {t} outside 1..{self.T}")
        return t - 1

    def gamma_at(self, t: int) -> float:
        """gamma_new at 1-based step t; gamma_at(0) is 1 by convention."""
        if t == 0:
            return 1.0
        return float(self.gamma_new[self._check_step(t)])

    def beta_tilde_at(self, t: int) -> float:
        return float(self.beta_tilde[self._check_step(t)])

    def snr_before(self) -> np.ndarray:
        return snr(self.gamma)

    def snr_after(self) -> np.ndarray:
        return snr(self.gamma_new)

    def terminal_snr(self) -> tuple:
        """(terminal SNR before rescaling, terminal SNR as used)."""
        return float(self.snr_before()[-1]), float(self.snr_after()[-1])


def write_schedule_csv(schedule: NoiseSchedule, stream: Optional[TextIO] = None) -> str:
    """
    Write one CSV row per timestep with the columns in SCHEDULE_CSV_COLUMNS.

    Returns the CSV text; also writes it to `stream` when given.
    """
    before = schedule.snr_before()
    after = schedule.snr_after()
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SCHEDULE_CSV_COLUMNS)
    for i in range(schedule.T):
        writer.writerow(
            [
                i + 1,
                repr(float(schedule.beta[i])),
                repr(float(schedule.gamma[i])),
                repr(float(schedule.sqrt_gamma_rescaled[i])),
                repr(float(before[i])),
                repr(float(after[i])),
                repr(float(np.log10(before[i]))),
                repr(float(np.log10(after[i]))),
            ]
        )
    text = buffer.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def schedule_rows(schedule: NoiseSchedule) -> List[dict]:
    """The CSV rows as dictionaries (handy for tests and summaries)."""
    reader = csv.DictReader(io.StringIO(write_schedule_csv(schedule)))
    return list(reader)
