"""SGD with momentum, weight decay, step-decay schedule, and gradient clipping.

The recipe: base lr 0.01 decayed by 0.1 at epochs 5/10/15, momentum 0.9,
weight decay 5e-4, global-L2 gradient clipping at 5 (configurable up to
100), 20 epochs of prototype training, batch size 32.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass
class OptimizerConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    decay_epochs: tuple[int, ...] = (5, 10, 15)
    decay_factor: float = 0.1
    clip_max_norm: float = 5.0
    epochs_prototype_stage: int = 20
    batch_size: int = 32

    def __post_init__(self):
        self.decay_epochs = tuple(self.decay_epochs)
        if self.base_lr <= 0 or self.decay_factor <= 0:
            raise ValidationError("learning rates and decay factor must be positive")
        if not 0 <= self.momentum < 1:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValidationError("weight decay must be nonnegative")
        if list(self.decay_epochs) != sorted(set(self.decay_epochs)):
            raise ValidationError("decay_epochs must be strictly increasing")
        if not 5 <= self.clip_max_norm <= 100:
            raise ValidationError(
                f"clip_max_norm must lie in [5, 100], got {self.clip_max_norm}"
            )
        if self.epochs_prototype_stage <= 0 or self.batch_size <= 0:
            raise ValidationError("epoch and batch counts must be positive")


@dataclass
class SgdState:
    """Per-parameter momentum buffers, created lazily at zero."""

    buffers: dict = field(default_factory=dict)
    step_count: int = 0


def lr_at_epoch(config: OptimizerConfig, epoch: int) -> float:
    """base_lr times decay_factor for every passed decay boundary (<= epoch)."""
    if epoch < 0:
        raise ValidationError(f"epoch must be nonnegative, got {epoch}")
    n = sum(1 for e in config.decay_epochs if e <= epoch)
    return config.base_lr * config.decay_factor**n


def global_norm(grads: dict) -> float:
    """Global L2 norm over all entries of a gradient map."""
    total = 0.0
    for g in grads.values():
        total += float(np.dot(g.ravel(), g.ravel()))
    return math.sqrt(total)


def clip_gradients(grads: dict, max_norm: float) -> dict:
    """Scale all entries by max_norm/norm when the global L2 norm exceeds it."""
    if max_norm <= 0:
        raise ValidationError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def sgd_step(params: dict, grads: dict, state: SgdState, lr: float, config: OptimizerConfig) -> None:
    """Classical momentum update, in place on the parameter arrays.

    buffer <- momentum * buffer + (grad + weight_decay * param)
    param  <- param - lr * buffer

    Parameters without a gradient entry are untouched; frozen parameters
    must never appear in `grads`.
    """
    for key in sorted(grads):
        if key not in params:
            raise ValidationError(f"gradient for unknown parameter {key!r}")
        p = params[key]
        g = grads[key]
        if p.shape != g.shape:
            raise ValidationError(f"{key!r}: gradient shape {g.shape} vs parameter {p.shape}")
        update = g + config.weight_decay * p
        buf = state.buffers.get(key)
        if buf is None:
            buf = update.astype(np.float64, copy=True)
        else:
            buf = config.momentum * buf + update
        state.buffers[key] = buf
        p -= lr * buf
    state.step_count += 1
