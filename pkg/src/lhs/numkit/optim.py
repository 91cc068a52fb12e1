from __future__ import annotations

import numpy as np


class Adam:
    """Adam with optional L2 weight decay folded into the gradient."""

    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, betas=(0.9, 0.999),
                 eps=1e-8, weight_decay=0.0, no_decay=()):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.no_decay = set(no_decay)
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in sorted(self.params):
            g = grads[k]
            if self.weight_decay and k not in self.no_decay:
                g = g + self.weight_decay * self.params[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            self.params[k] = self.params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
