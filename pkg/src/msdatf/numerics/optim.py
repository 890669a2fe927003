"""First-order optimizers over named parameter dictionaries."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam with per-parameter step counters.

    ``step(names)`` updates only the listed parameters, which is how the
    training loop freezes the generator or the classifier heads.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {}

    def step(self, names=None):
        names = sorted(self.params) if names is None else names
        for name in names:
            p = self.params[name]
            if p.grad is None:
                continue
            m, v, t = self.state.get(name, (np.zeros_like(p.data), np.zeros_like(p.data), 0))
            t += 1
            m = self.beta1 * m + (1.0 - self.beta1) * p.grad
            v = self.beta2 * v + (1.0 - self.beta2) * p.grad * p.grad
            mhat = m / (1.0 - self.beta1 ** t)
            vhat = v / (1.0 - self.beta2 ** t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)
            self.state[name] = (m, v, t)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


class SGD:
    def __init__(self, params, lr=1e-2):
        self.params = params
        self.lr = lr

    def step(self, names=None):
        names = sorted(self.params) if names is None else names
        for name in names:
            p = self.params[name]
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
