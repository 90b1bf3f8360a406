"""Patch-mode joint feature fusion.

Each spatial position of a (B, d, h, w) feature pair is a depth-d patch;
patches are cut into k contiguous mini-patches of length l = d/k. For
every mini-patch the mean of the two temporal views acts as a baseline
from which a small linear+softmax head infers a probability over m change
modes; m dedicated fusion heads each fuse a different linear combination
alpha_j*t1 + beta_j*t2, and the final result is the expectation of the
head outputs under the mode probabilities. Unlike plain subtraction this
keeps unchanged-region content in the fused features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tensor, matmul, softmax
from .engine.nn import Module, Parameter

# t1 view / t2 view / baseline / difference
DEFAULT_MODES = ((1.0, 0.0), (0.0, 1.0), (0.5, 0.5), (1.0, -1.0))


@dataclass
class FusionConfig:
    depth: int
    minipatches: int = 16      # k: mini-patches per patch
    modes: int = 4             # m: fusion heads
    alphas: tuple = ()
    betas: tuple = ()
    learnable_mix: bool = False

    def __post_init__(self):
        if self.depth % self.minipatches:
            raise ValueError(
                f"depth {self.depth} is not divisible by k={self.minipatches}")
        if self.modes < 2:
            raise ValueError("need at least 2 change modes")
        if not self.alphas:
            if self.modes > len(DEFAULT_MODES):
                raise ValueError(
                    f"no default mixing coefficients for m={self.modes}; "
                    "pass alphas/betas explicitly")
            pairs = DEFAULT_MODES[: self.modes]
            self.alphas = tuple(a for a, _ in pairs)
            self.betas = tuple(b for _, b in pairs)
        if len(self.alphas) != self.modes or len(self.betas) != self.modes:
            raise ValueError("alphas/betas must have one entry per mode")

    @property
    def length(self) -> int:
        """Mini-patch length l = d/k."""
        return self.depth // self.minipatches


def slice_minipatches(x: Tensor, k: int) -> Tensor:
    """(B, d, h, w) -> (B, h*w*k, l) by contiguous depth split; lossless."""
    B, d, h, w = x.shape
    if d % k:
        raise ValueError(f"depth {d} is not divisible by k={k}")
    l = d // k
    return x.reshape(B, k, l, h, w).transpose(0, 3, 4, 1, 2).reshape(B, h * w * k, l)


def merge_minipatches(x: Tensor, k: int, spatial) -> Tensor:
    """Inverse of slice_minipatches given the original (h, w)."""
    h, w = spatial
    B, n, l = x.shape
    if n != h * w * k:
        raise ValueError(f"{n} mini-patches do not tile a {h}x{w} grid with k={k}")
    return x.reshape(B, h, w, k, l).transpose(0, 3, 4, 1, 2).reshape(B, k * l, h, w)


class PatchModeFusion(Module):
    def __init__(self, cfg: FusionConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        l, m = cfg.length, cfg.modes
        self.perception_w = Parameter(rng.standard_normal((l, m)) / np.sqrt(l))
        self.perception_b = Parameter(np.zeros(m))
        self.head_w = Parameter(rng.standard_normal((m, l, l)) / np.sqrt(l))
        self.head_b = Parameter(np.zeros((m, l)))
        if cfg.learnable_mix:
            self.alphas = Parameter(np.asarray(cfg.alphas))
            self.betas = Parameter(np.asarray(cfg.betas))
        else:
            self.alphas = Tensor(np.asarray(cfg.alphas))
            self.betas = Tensor(np.asarray(cfg.betas))

    def mode_probabilities(self, f1: Tensor, f2: Tensor) -> Tensor:
        """softmax(Linear(l, m)(mean of the two views)): (B, N, m)."""
        baseline = (f1 + f2) * 0.5
        return softmax(matmul(baseline, self.perception_w) + self.perception_b, axis=-1)

    def head_outputs(self, f1: Tensor, f2: Tensor) -> Tensor:
        """Per-mode fused mini-patches: (B, N, m, l)."""
        B, n, l = f1.shape
        m = self.cfg.modes
        a = self.alphas.reshape(m, 1)
        b = self.betas.reshape(m, 1)
        combo = f1.reshape(B, n, 1, l) * a + f2.reshape(B, n, 1, l) * b
        # (B,n,m,1,l) x (m,l_out,l_in) summed over l_in; faster than a
        # batched matmul of l x l blocks for small l
        fused = (combo.reshape(B, n, m, 1, l) * self.head_w).sum(axis=-1)
        return fused + self.head_b

    def fuse_minipatches(self, f1: Tensor, f2: Tensor) -> Tensor:
        """Expectation of head outputs under the mode probabilities."""
        B, n, l = f1.shape
        m = self.cfg.modes
        probs = self.mode_probabilities(f1, f2)
        heads = self.head_outputs(f1, f2)
        return (probs.reshape(B, n, m, 1) * heads).sum(axis=2)

    def forward(self, t1: Tensor, t2: Tensor) -> Tensor:
        if t1.shape != t2.shape:
            raise ValueError(f"feature pair shapes differ: {t1.shape} vs {t2.shape}")
        B, d, h, w = t1.shape
        k = self.cfg.minipatches
        f1 = slice_minipatches(t1, k)
        f2 = slice_minipatches(t2, k)
        return merge_minipatches(self.fuse_minipatches(f1, f2), k, (h, w))
