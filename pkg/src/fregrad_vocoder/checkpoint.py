#!/usr/bin/env python3
"""
Checkpoint persistence

A checkpoint is an FGR1 record container whose JSON header carries the
run config, step counter and RNG state, and whose records hold the model
parameters and Adam moments (param/<name>, adam_m/<name>, adam_v/<name>).
Restoring one reproduces the next training step bit for bit.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

import numpy as np

from .config import RunConfig, config_differences
from .container import read_records, write_records
from .errors import CheckpointMismatchError, ConfigError, ContainerError
from .model import FreGrad
from .optim import Adam

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "fregrad-checkpoint"

# fields allowed to change between a checkpoint and a resumed run
RESUME_IGNORED = ("training.", "data.paths")
# fields that must agree for the weights to load at all
ARCHITECTURE_FIELDS = ("model.", "ablations.freq_dconv")


@dataclass
class Checkpoint:
    config: RunConfig
    step: int
    rng_state: Dict[str, Any]
    params: Dict[str, np.ndarray]
    adam_step: int
    adam_m: Dict[str, np.ndarray]
    adam_v: Dict[str, np.ndarray]

    @classmethod
    def capture(
        cls, config: RunConfig, step: int, rng: np.random.Generator, model: FreGrad, optimizer: Adam
    ) -> "Checkpoint":
        state = optimizer.state_dict()
        return cls(
            config=config,
            step=step,
            rng_state=rng.bit_generator.state,
            params=model.state_dict(),
            adam_step=state["step"],
            adam_m=state["m"],
            adam_v=state["v"],
        )

    def restore(self, model: FreGrad, optimizer: Adam = None) -> np.random.Generator:
        """Load weights (and optimizer state); returns the restored generator."""
        model.load_state_dict(self.params)
        if optimizer is not None:
            optimizer.load_state_dict({"step": self.adam_step, "m": self.adam_m, "v": self.adam_v})
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng_state
        return rng


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": checkpoint.config.to_dict(),
        "step": checkpoint.step,
        "rng_state": checkpoint.rng_state,
        "adam_step": checkpoint.adam_step,
    }
    records = [(f"param/{n}", a) for n, a in checkpoint.params.items()]
    records += [(f"adam_m/{n}", a) for n, a in checkpoint.adam_m.items()]
    records += [(f"adam_v/{n}", a) for n, a in checkpoint.adam_v.items()]
    write_records(path, header, records)
    logger.debug(f"Saved checkpoint step {checkpoint.step} to {path}")


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Read a checkpoint file.

    Raises:
        ContainerError: if the file is not a readable FGR1 checkpoint
    """
    try:
        header, arrays = read_records(path)
    except FileNotFoundError:
        raise ContainerError(f"Checkpoint not found: {path}") from None
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ContainerError(f"{path} is not a FreGrad checkpoint")
    missing = [k for k in ("config", "step", "rng_state", "adam_step") if k not in header]
    if missing:
        raise ContainerError(f"{path}: checkpoint header lacks {', '.join(missing)}")
    try:
        config = RunConfig.from_dict(header["config"])
    except ConfigError as e:
        raise ContainerError(f"{path}: stored config is invalid: {e}") from e

    def group(prefix: str) -> Dict[str, np.ndarray]:
        return {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}

    return Checkpoint(
        config=config,
        step=int(header["step"]),
        rng_state=header["rng_state"],
        params=group("param/"),
        adam_step=int(header["adam_step"]),
        adam_m=group("adam_m/"),
        adam_v=group("adam_v/"),
    )


def _matches(name: str, patterns: Iterable[str]) -> bool:
    return any(name == p or (p.endswith(".") and name.startswith(p)) for p in patterns)


def check_compatible(saved: RunConfig, requested: RunConfig, resume: bool = False) -> None:
    """
    Raise CheckpointMismatchError listing every field that must agree but does not.

    For sampling only the architecture fields matter; a resumed training
    run must agree on everything except training.* and data.paths.
    """
    differing = config_differences(saved.to_dict(), requested.to_dict())
    if resume:
        relevant: List[str] = [d for d in differing if not _matches(d, RESUME_IGNORED)]
    else:
        relevant = [d for d in differing if _matches(d, ARCHITECTURE_FIELDS)]
    if relevant:
        raise CheckpointMismatchError(relevant)
