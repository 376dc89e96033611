"""RMSProp and the per-epoch exponential learning-rate decay."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OptimConfig:
    lr_class: float = 0.0004
    lr_triplet: float = 0.001
    batch: int = 32
    alpha_class: float = 0.99
    alpha_triplet: float = 0.9
    epsilon: float = 1e-8
    decay_a: float = 1500.0
    decay_b: float = 1250.0
    seed: int = 0

    def __post_init__(self):
        if min(self.lr_class, self.lr_triplet) <= 0 or self.epsilon <= 0 or self.batch < 1:
            raise ValueError("learning rates, epsilon and batch must be positive")
        if not (0 <= self.alpha_class < 1 and 0 <= self.alpha_triplet < 1):
            raise ValueError("rms decay must lie in [0, 1)")
        if self.decay_a <= 0 or self.decay_b <= 0:
            raise ValueError("decay constants must be positive")


def decay_factor(cfg: OptimConfig) -> float:
    return math.exp(math.log(0.1) / (cfg.decay_a * cfg.decay_b))


def lr_decay(epoch: int, cfg: OptimConfig) -> float:
    """``decay_factor ** epoch``, evaluated as one exponential to avoid compounding rounding."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return math.exp(epoch * math.log(0.1) / (cfg.decay_a * cfg.decay_b))


class RMSProp:
    """``v <- a v + (1-a) g^2``; ``p <- p - lr g / (sqrt(v) + eps)``."""

    def __init__(self, lr: float, alpha: float = 0.99, eps: float = 1e-8):
        self.lr, self.alpha, self.eps = lr, alpha, eps
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict, lr: float | None = None):
        lr = self.lr if lr is None else lr
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.data.shape}")
            v = self.v.get(name)
            v = (1.0 - self.alpha) * g * g if v is None else self.alpha * v + (1.0 - self.alpha) * g * g
            self.v[name] = v
            p.data = p.data - lr * g / (np.sqrt(v) + self.eps)
