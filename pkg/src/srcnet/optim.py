"""Adam with decoupled weight decay.

The decay is applied directly to the parameters, scaled by the current
learning rate, before the moment update; lr = 0 therefore leaves
parameters fully untouched.
"""

from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(self, named_params, lr: float = 2e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        if lr is None:
            lr = self.lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.named_params:
            g = p.grad
            if g is None:
                continue
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self) -> dict:
        state = {"step_count": np.asarray([self.step_count], dtype=np.int64)}
        for name in self.m:
            state[f"m.{name}"] = self.m[name]
            state[f"v.{name}"] = self.v[name]
        return state

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step_count"][0])
        for name in self.m:
            self.m[name] = state[f"m.{name}"].astype(
                self.m[name].dtype, copy=True)
            self.v[name] = state[f"v.{name}"].astype(
                self.v[name].dtype, copy=True)
