"""Decoupled-weight-decay Adam with a linear warm-up / linear decay schedule."""
from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.1, total_steps=None, warmup_ratio=0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.total_steps = total_steps
        self.warmup_steps = int(np.ceil(warmup_ratio * total_steps)) if total_steps else 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def current_lr(self) -> float:
        """Learning rate for the upcoming step."""
        s = self.t
        if s < self.warmup_steps:
            return self.lr * (s + 1) / self.warmup_steps
        if self.total_steps:
            span = max(self.total_steps - self.warmup_steps, 1)
            return self.lr * max(self.total_steps - s, 0) / span
        return self.lr

    def step(self, grads: dict[str, np.ndarray]):
        lr = self.current_lr()
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            # decay matrices only; biases, gains and tokens are left alone
            if self.wd and p.ndim >= 2:
                p -= lr * self.wd * p
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
