#!/usr/bin/env python3
"""
Training loop

Trainer owns the model, optimiser and random generator of one run. It
reports progress through events (train_start, step, checkpoint, train_end)
delivered to registered listeners; the loss CSV is written by one.
"""

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np

from . import autograd as ag
from .checkpoint import Checkpoint, check_compatible, save_checkpoint
from .config import RunConfig
from .dataset import AudioDataset
from .diffusion import train_step
from .model import FreGrad
from .optim import Adam

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["step", "L_diff_l", "L_diff_h", "L_mag_l", "L_mag_h", "L_final"]

EventListener = Callable[[str, Dict[str, Any]], None]


def apply_numerics(config: RunConfig) -> None:
    """Set the autograd dtype and NaN checking for this thread."""
    ag.set_default_dtype(config.numerics.dtype)
    ag.set_debug(config.numerics.debug_nan)


class LossCsvWriter:
    """Event listener appending one loss row per step, flushed immediately."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._file = None
        self._writer = None

    def __call__(self, event_type: str, event_data: Dict[str, Any]) -> None:
        if event_type == "train_start":
            self._open(resume=event_data.get("step", 0) > 0)
        elif event_type == "step":
            if self._writer is None:
                self._open(resume=True)
            self._writer.writerow([event_data["step"]] + [repr(event_data[c]) for c in LOSS_COLUMNS[1:]])
            self._file.flush()
        elif event_type == "train_end":
            self.close()

    def _open(self, resume: bool) -> None:
        if self._file is not None:
            return
        write_header = not (resume and self.path.exists() and self.path.stat().st_size > 0)
        self._file = open(self.path, "a" if resume else "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._file, lineterminator="\n")
        if write_header:
            self._writer.writerow(LOSS_COLUMNS)
            self._file.flush()

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None
            self._writer = None


@dataclass
class TrainingSummary:
    start_step: int
    end_step: int
    losses: List[Dict[str, float]] = field(default_factory=list)
    last_checkpoint: Optional[Path] = None

    @property
    def first_loss(self) -> Optional[float]:
        return self.losses[0]["L_final"] if self.losses else None

    @property
    def last_loss(self) -> Optional[float]:
        return self.losses[-1]["L_final"] if self.losses else None


class Trainer:
    """Runs train_step in a loop with periodic checkpoints."""

    def __init__(
        self,
        config: RunConfig,
        dataset: AudioDataset,
        out_dir: Union[str, Path],
        model: Optional[FreGrad] = None,
        optimizer: Optional[Adam] = None,
        rng: Optional[np.random.Generator] = None,
        start_step: int = 0,
    ):
        """
        Initialize the trainer.

        Args:
            config: The run configuration
            dataset: Source of training batches
            out_dir: Directory for checkpoints and the loss log
            model, optimizer, rng: Restored state; built from the config
                (seeded by training.seed) when omitted
            start_step: Number of steps already taken
        """
        apply_numerics(config)
        self.config = config
        self.dataset = dataset
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.rng = rng if rng is not None else np.random.default_rng(config.training.seed)
        self.model = model or FreGrad(config.model, self.rng, config.ablations.freq_dconv)
        opt = config.optimizer
        self.optimizer = optimizer or Adam(
            list(self.model.named_parameters()), opt.lr, opt.beta1, opt.beta2, opt.eps
        )
        self.schedule = config.build_schedule()
        self.mag_config = config.loss.mag_config()
        self.step = start_step
        self.event_listeners: List[EventListener] = []
        self._started_at: Optional[float] = None

    @classmethod
    def from_checkpoint(
        cls,
        checkpoint: Checkpoint,
        config: RunConfig,
        dataset: AudioDataset,
        out_dir: Union[str, Path],
    ) -> "Trainer":
        """
        Resume a run. The config must match the checkpoint's apart from
        training.* and data.paths.

        Raises:
            CheckpointMismatchError: listing the differing fields
        """
        check_compatible(checkpoint.config, config, resume=True)
        apply_numerics(config)
        model = FreGrad(config.model, np.random.default_rng(0), config.ablations.freq_dconv)
        opt = config.optimizer
        optimizer = Adam(list(model.named_parameters()), opt.lr, opt.beta1, opt.beta2, opt.eps)
        rng = checkpoint.restore(model, optimizer)
        logger.info(f"Resuming from step {checkpoint.step}")
        return cls(config, dataset, out_dir, model, optimizer, rng, checkpoint.step)

    def emit_event(self, event_type: str, event_data: Dict[str, Any]) -> None:
        """
        Emit an event to all registered listeners.

        Args:
            event_type: The type of event
            event_data: The event data
        """
        logger.debug(f"Event: {event_type} - {event_data}")
        for listener in self.event_listeners:
            try:
                listener(event_type, event_data)
            except Exception as e:
                logger.error(f"Error in event listener: {e}")

    def add_event_listener(self, listener: EventListener) -> None:
        """
        Add an event listener.

        Args:
            listener: A function that takes event_type and event_data as arguments
        """
        self.event_listeners.append(listener)

    def train_one_step(self) -> Dict[str, float]:
        """Draw a batch, backpropagate the objective and update the weights."""
        cfg = self.config
        batch = self.dataset.sample_batch(self.rng, cfg.optimizer.batch_size)
        self.optimizer.zero_grad()
        result = train_step(
            self.model,
            batch.waveforms,
            batch.mels,
            self.schedule,
            self.rng,
            lam=cfg.effective_lambda,
            mag_config=self.mag_config,
            separate_prior=cfg.ablations.separate_prior,
            sigma_min=cfg.data.sigma_min,
        )
        self.optimizer.step()
        self.step += 1
        values = result.losses.values()
        self.emit_event("step", {"step": self.step, **values})
        return values

    def checkpoint_path(self, step: int) -> Path:
        return self.out_dir / f"checkpoint_{step:07d}.fgr"

    def save(self) -> Path:
        checkpoint = Checkpoint.capture(self.config, self.step, self.rng, self.model, self.optimizer)
        path = self.checkpoint_path(self.step)
        save_checkpoint(path, checkpoint)
        save_checkpoint(self.out_dir / "latest.fgr", checkpoint)
        elapsed = time.perf_counter() - self._started_at if self._started_at else 0.0
        self.emit_event("checkpoint", {"step": self.step, "path": str(path), "elapsed": elapsed})
        logger.info(f"Checkpoint at step {self.step} ({elapsed:.1f} s elapsed): {path}")
        return path

    def run(self, max_steps: Optional[int] = None) -> TrainingSummary:
        """
        Train until the step counter reaches max_steps (training.max_steps by default).

        A checkpoint is written every checkpoint_interval steps and once more
        on exit, including on KeyboardInterrupt.
        """
        cfg = self.config.training
        target = cfg.max_steps if max_steps is None else max_steps
        summary = TrainingSummary(start_step=self.step, end_step=self.step)
        self._started_at = time.perf_counter()
        self.emit_event(
            "train_start",
            {"step": self.step, "max_steps": target, "parameters": self.model.num_parameters()},
        )
        saved_at = None
        try:
            while self.step < target:
                values = self.train_one_step()
                summary.losses.append(values)
                if self.step % cfg.log_interval == 0:
                    logger.info(f"step {self.step}: L_final={values['L_final']:.6f}")
                if self.step % cfg.checkpoint_interval == 0:
                    summary.last_checkpoint = self.save()
                    saved_at = self.step
        finally:
            if saved_at != self.step:
                summary.last_checkpoint = self.save()
            summary.end_step = self.step
            self.emit_event("train_end", {"step": self.step})
        return summary
