"""Perception and interaction between the two siamese branches.

Each branch's feature map gets a per-element credibility in (0, 1),
inferred by a channel-mixing 1x1 convolution plus sigmoid. The branches
then exchange information as the expectation over three cases: keep the
own feature (credible), take the other branch's (own not credible, other
credible), or fall back to the bi-temporal mean (neither credible):

    t1' = t1*P1 + t2*(1-P1)*P2 + (t1+t2)/2 * (1-P1)*(1-P2)

and symmetrically for t2'. The three coefficients always sum to 1, so
each output element is a convex combination of t1 and t2.
"""

from __future__ import annotations

import numpy as np

from .engine import Tensor, conv2d, sigmoid
from .engine.nn import Module, Parameter


class CredibilityGate(Module):
    """sigmoid(Linear(C, C)) applied independently at every spatial position.

    The bias starts positive so initial credibilities sit near 0.9 and the
    exchange begins close to identity; a neutral 0.5 start mixes the
    branches so aggressively that the change signal reaching the fusion
    stage is washed out early in training.
    """

    def __init__(self, channels: int, rng: np.random.Generator,
                 bias_init: float = 2.0):
        super().__init__()
        self.channels = channels
        self.weight = Parameter(
            rng.standard_normal((channels, channels, 1, 1)) / np.sqrt(channels))
        self.bias = Parameter(np.full(channels, float(bias_init)))

    def forward(self, t: Tensor) -> Tensor:
        if t.shape[1] != self.channels:
            raise ValueError(
                f"credibility: expected {self.channels} channels, got {t.shape[1]}")
        return sigmoid(conv2d(t, self.weight, self.bias))


def interact(t1: Tensor, t2: Tensor, p1: Tensor, p2: Tensor):
    """Expectation-based exchange given both credibilities."""
    q1 = 1.0 - p1
    q2 = 1.0 - p2
    fallback = (t1 + t2) * 0.5 * (q1 * q2)   # shared neither-credible term
    out1 = t1 * p1 + t2 * (q1 * p2) + fallback
    out2 = t2 * p2 + t1 * (q2 * p1) + fallback
    return out1, out2


class PerceptionInteraction(Module):
    """Credibility gates plus the cross-branch exchange.

    By default both branches share one gate (siamese symmetry); pass
    shared=False for separate per-branch gates.
    """

    def __init__(self, channels: int, rng: np.random.Generator, shared: bool = True):
        super().__init__()
        self.gate = CredibilityGate(channels, rng)
        self.gate2 = None if shared else CredibilityGate(channels, rng)

    def _gates(self, t1, t2):
        g2 = self.gate if self.gate2 is None else self.gate2
        return self.gate(t1), g2(t2)

    def forward(self, t1: Tensor, t2: Tensor):
        if t1.shape != t2.shape:
            raise ValueError(f"feature pair shapes differ: {t1.shape} vs {t2.shape}")
        p1, p2 = self._gates(t1, t2)
        return interact(t1, t2, p1, p2)

    def noise_pass(self, s_ori: Tensor, noise_sigma: float,
                   rng: np.random.Generator | None = None,
                   noise: np.ndarray | None = None):
        """Feed a clean signal and a noise-corrupted copy through the module.

        The corruption is additive Gaussian noise scaled by noise_sigma
        times the clean signal's standard deviation; the noise is treated
        as a constant (no gradient through its construction). Returns both
        outputs together with the clean reference.
        """
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if noise is None:
            if noise_sigma == 0.0:
                noise = np.zeros(s_ori.shape)
            else:
                if rng is None:
                    raise ValueError("need rng (or explicit noise) when sigma > 0")
                scale = noise_sigma * float(s_ori.data.std())
                noise = rng.standard_normal(s_ori.shape) * scale
        noisy = s_ori + Tensor(noise)
        out1, out2 = self.forward(s_ori, noisy)
        return (out1, out2), s_ori
