"""Adam with polynomial learning-rate decay, and RMSProp.

Both optimizers own their state exclusively: a model optimizer and a policy
optimizer never share moment buffers, so crossed updates stay isolated.
"""
from __future__ import annotations

import numpy as np

from memonet.autodiff import Value
from memonet.errors import NumericError


def polynomial_decay(lr_start: float, step: int, total_steps: int, power: float = 1.0,
                     lr_end: float = 0.0) -> float:
    """Learning rate after ``step`` of ``total_steps``; reaches ``lr_end`` at the end."""
    if total_steps <= 0:
        return lr_start
    frac = min(max(step, 0), total_steps) / total_steps
    return (lr_start - lr_end) * (1.0 - frac) ** power + lr_end


def _check_finite(params: list[Value], who: str):
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"{who}: non-finite gradient in parameter {p.name or '?'}")


class Adam:
    def __init__(self, params: list[Value], lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, total_steps: int = 0,
                 power: float = 1.0):
        self.params = list(params)
        self.lr_start = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.total_steps = total_steps
        self.power = power
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    @property
    def lr(self) -> float:
        return polynomial_decay(self.lr_start, self.step_count, self.total_steps, self.power)

    def step(self):
        _check_finite(self.params, "adam")
        lr = self.lr
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> dict:
        return {"kind": "adam", "step": self.step_count, "lr": self.lr_start,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "total_steps": self.total_steps, "power": self.power,
                "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def load_state_dict(self, state: dict):
        self.step_count = int(state["step"])
        self.m = [np.array(a, dtype=np.float64) for a in state["m"]]
        self.v = [np.array(a, dtype=np.float64) for a in state["v"]]


class RMSProp:
    def __init__(self, params: list[Value], lr: float = 1e-4, decay: float = 0.9,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr_start = lr
        self.decay, self.eps = decay, eps
        self.step_count = 0
        self.ms = [np.zeros_like(p.data) for p in self.params]

    @property
    def lr(self) -> float:
        return self.lr_start

    def step(self):
        _check_finite(self.params, "rmsprop")
        self.step_count += 1
        for p, ms in zip(self.params, self.ms):
            g = p.grad
            ms *= self.decay
            ms += (1 - self.decay) * g * g
            p.data -= self.lr_start * g / (np.sqrt(ms) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> dict:
        return {"kind": "rmsprop", "step": self.step_count, "lr": self.lr_start,
                "decay": self.decay, "eps": self.eps, "ms": [a.copy() for a in self.ms]}

    def load_state_dict(self, state: dict):
        self.step_count = int(state["step"])
        self.ms = [np.array(a, dtype=np.float64) for a in state["ms"]]
