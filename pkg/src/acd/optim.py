"""Adam optimizer with bias correction, operating on named parameter lists."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["AdamState", "Adam", "MissingGradient"]


class MissingGradient(RuntimeError):
    """A parameter had no gradient when the optimizer stepped."""


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    def __init__(self, named_params, lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(named_params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in self.params:
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        s = self.state
        s.step += 1
        b1c = 1.0 - s.beta1 ** s.step
        b2c = 1.0 - s.beta2 ** s.step
        for name, p in self.params:
            if p.grad is None:
                raise MissingGradient(f"parameter {name!r} has no gradient")
            g = p.grad
            m = s.m[name]
            v = s.v[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * (g * g)
            p.data -= s.lr * (m / b1c) / (np.sqrt(v / b2c) + s.eps)
