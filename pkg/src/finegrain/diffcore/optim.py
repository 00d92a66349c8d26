"""SGD with momentum, decoupled weight decay and cosine learning-rate decay."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


def cosine_lr(lr_base: float, step: int, total_steps: int) -> float:
    """``lr_base * 0.5 * (1 + cos(pi * step / total_steps))``, clamped at the end."""
    if total_steps <= 0:
        return lr_base
    t = min(max(step, 0), total_steps)
    return lr_base * 0.5 * (1.0 + math.cos(math.pi * t / total_steps))


@dataclass
class OptimizerState:
    learning_rate_base: float = 0.0005
    weight_decay: float = 0.0005
    momentum: float = 0.9
    step_index: int = 0
    total_steps: int = 1
    velocity: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def lr(self) -> float:
        return cosine_lr(self.learning_rate_base, self.step_index, self.total_steps)


def sgd_step(state: OptimizerState, params: Sequence[Tensor]) -> float:
    """One update at the current cosine-decayed rate; returns the rate used.

    ``v <- momentum * v + grad`` then ``w <- w - lr * v - lr * wd * w``.
    The decay term acts on the weights directly and never enters ``grad``.
    """
    if not state.velocity:
        state.velocity = [np.zeros_like(p.data) for p in params]
    if len(state.velocity) != len(params):
        raise ValueError(
            f"sgd_step: {len(params)} parameters but {len(state.velocity)} velocity buffers"
        )
    lr = state.lr
    for p, v in zip(params, state.velocity):
        if p.grad is None:
            raise RuntimeError(f"sgd_step: parameter {p.name or p.shape} has no grad; call backward first")
        v *= state.momentum
        v += p.grad
        decay = p.data * (lr * state.weight_decay)
        p.data -= lr * v
        p.data -= decay
    state.step_index += 1
    return lr
