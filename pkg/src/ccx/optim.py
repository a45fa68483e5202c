"""AdamW with per-group learning rates (decoupled weight decay)."""

from __future__ import annotations

import numpy as np


class AdamW:
    """Standard bias-corrected AdamW; a group rate of 0 freezes the group.

    Frozen parameters (rate exactly 0) are left bit-unchanged, moments
    included, so a frozen stage cannot perturb them even at float
    rounding level.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.beta1, self.beta2 = beta1, beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {p.name: np.zeros_like(p.tensor.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.tensor.data) for p in self.params}

    def step(self, lr_map):
        for p in self.params:
            if p.group not in lr_map:
                raise KeyError(f"lr_map missing group {p.group!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p in self.params:
            lr = lr_map[p.group]
            if lr == 0.0:
                continue
            g = p.tensor.grad
            if g is None:
                g = np.zeros_like(p.tensor.data)
            m = self.m[p.name]
            v = self.v[p.name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            p.tensor.data -= lr * (mhat / (np.sqrt(vhat) + self.eps)
                                   + self.weight_decay * p.tensor.data)

    def reset(self):
        self.t = 0
        for buf in (*self.m.values(), *self.v.values()):
            buf[...] = 0.0
