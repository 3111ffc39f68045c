from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import Parameter
from .functional import ShapeError


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


def l1_loss(pred: np.ndarray, target: np.ndarray):
    """Mean absolute error and its gradient ``sign(pred - target) / count``."""
    if pred.shape != target.shape:
        raise ShapeError(f"loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.abs(diff, dtype=np.float64).mean())
    grad = (np.sign(diff) / diff.size).astype(pred.dtype)
    return loss, grad


def adam_step(params: Iterable[Parameter], cfg: OptimizerConfig, t: int) -> None:
    """One bias-corrected Adam update at step ``t >= 1``; gradients are zeroed afterwards."""
    if t < 1:
        raise ValueError(f"Adam step index starts at 1, got {t}")
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    step = cfg.lr / c1
    for p in params:
        dtype = p.value.dtype.type
        p.m *= dtype(cfg.beta1)
        p.m += dtype(1.0 - cfg.beta1) * p.grad
        p.v *= dtype(cfg.beta2)
        p.v += dtype(1.0 - cfg.beta2) * p.grad * p.grad
        denom = np.sqrt(p.v / dtype(c2)) + dtype(cfg.epsilon)
        p.value -= dtype(step) * p.m / denom
        p.zero_grad()

