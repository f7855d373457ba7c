#!/usr/bin/env python3
"""Adam optimiser over named autograd Parameters."""

import logging
from typing import Dict, List, Tuple

import numpy as np

from .autograd import Parameter

logger = logging.getLogger(__name__)


class Adam:
    """
    Adam with bias correction and a fixed learning rate.

    Moment buffers are keyed by parameter name so they can be written to
    and restored from checkpoints.
    """

    def __init__(
        self,
        named_parameters: List[Tuple[str, Parameter]],
        lr: float = 2e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError(f"Learning rate must be > 0, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"Adam betas must lie in [0, 1), got {beta1}, {beta2}")
        self.params = list(named_parameters)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self) -> None:
        """Update every parameter that has a gradient."""
        self.step_count += 1
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params:
            if p.grad is None:
                continue
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * p.grad
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * p.grad**2
            p.data = p.data - self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)

    def state_dict(self) -> Dict[str, object]:
        return {
            "step": self.step_count,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: Dict[str, object]) -> None:
        """Restore step count and moments; names and shapes must match."""
        for key in ("m", "v"):
            buffers = state[key]
            for name, p in self.params:
                if name not in buffers:
                    raise ValueError(f"Optimizer state has no {key} buffer for {name}")
                if np.shape(buffers[name]) != p.shape:
                    raise ValueError(f"Optimizer {key} buffer for {name} has the wrong shape")
        self.step_count = int(state["step"])
        self.m = {n: np.array(state["m"][n], dtype=p.data.dtype) for n, p in self.params}
        self.v = {n: np.array(state["v"][n], dtype=p.data.dtype) for n, p in self.params}
