"""The change-detection network and its ablation variants.

Pipeline: patch embedding -> siamese extraction stage (n1 blocks, each a
weight-shared backbone block optionally followed by cross-branch
interaction) -> feature fusion (patch-mode fusion or plain subtraction)
-> prediction stage (n2 backbone blocks) -> patch combining back to
pixel-level logits. A shared land-cover head on the extraction features
supports the auxiliary change-probability supervision.

Variants:
    full   interaction + patch-mode fusion
    beta   interaction, subtraction fusion
    gamma  no interaction, patch-mode fusion
    alpha  no interaction, subtraction fusion
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import engine
from .engine import Tensor, gelu, softmax
from .engine.nn import (
    BatchNorm2d, ChannelLayerNorm, Conv2d, ConvTranspose2d, GRN, Module,
    ModuleList,
)
from .pim import PerceptionInteraction
from .pmffm import FusionConfig, PatchModeFusion

VARIANTS = ("full", "alpha", "beta", "gamma")


@dataclass
class ModelConfig:
    c: int = 256               # embedding channels
    p: int = 8                 # patch size in pixels
    n1: int = 4                # extraction blocks
    n2: int = 4                # prediction blocks
    k: int = 16                # mini-patches per patch
    m: int = 4                 # fusion modes
    in_ch: int = 3
    out_ch: int = 2
    landcover_classes: int = 8
    variant: str = "full"
    shared_credibility: bool = True
    learnable_mix: bool = False
    noise_sigma: float = 0.1
    loss1_block: int = -1      # extraction block whose interaction gets the noise pass

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.p % 4:
            raise ValueError(f"patch size {self.p} must be divisible by 4")
        if self.c % self.k:
            raise ValueError(f"c={self.c} must be divisible by k={self.k}")
        if self.c % 4:
            raise ValueError(f"c={self.c} must be divisible by 4 for the embedding")
        if self.out_ch < 2:
            raise ValueError("out_ch must be >= 2 (softmax over classes)")
        if self.landcover_classes < 2:
            raise ValueError("need at least 2 land-cover classes")
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("n1 and n2 must be >= 1")

    @property
    def has_interaction(self) -> bool:
        return self.variant in ("full", "beta")

    @property
    def has_patch_fusion(self) -> bool:
        return self.variant in ("full", "gamma")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def desk_scale_config(**overrides) -> ModelConfig:
    """Small configuration meant to train in minutes on a CPU."""
    base = dict(c=32, p=4, n1=2, n2=2, k=16, m=4, landcover_classes=4)
    base.update(overrides)
    return ModelConfig(**base)


class PatchEmbed(Module):
    """Two convolutions cutting the image into depth-c patch features."""

    def __init__(self, in_ch: int, c: int, p: int, rng):
        super().__init__()
        self.p = p
        self.conv1 = Conv2d(in_ch, c // 4, 4, rng, stride=4)
        self.bn = BatchNorm2d(c // 4)
        self.conv2 = Conv2d(c // 4, c, p // 4, rng, stride=p // 4)

    def forward(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        if H % self.p or W % self.p:
            raise ValueError(
                f"input extent {(H, W)} is not divisible by patch size {self.p}")
        return self.conv2(self.bn(self.conv1(x)))


class SrcBlock(Module):
    """Backbone block: parallel depthwise convs (kernels 1/3/5) exploring
    context between patches, then an inverted-bottleneck pointwise pair
    for the content inside a patch, with a residual connection."""

    def __init__(self, c: int, rng):
        super().__init__()
        self.dw1 = Conv2d(c, c, 1, rng, groups=c)
        self.dw3 = Conv2d(c, c, 3, rng, padding=1, groups=c)
        self.dw5 = Conv2d(c, c, 5, rng, padding=2, groups=c)
        self.norm = ChannelLayerNorm(c)
        self.pw1 = Conv2d(c, 4 * c, 1, rng)
        self.grn = GRN(4 * c)
        self.pw2 = Conv2d(4 * c, c, 1, rng)
        self.channels = c

    def forward(self, x: Tensor) -> Tensor:
        # the three same-padded depthwise branches sum elementwise, so run
        # them as one 5x5 depthwise conv with the small kernels zero-padded
        # into the center
        w = (engine.pad2d(self.dw1.weight, 2) + engine.pad2d(self.dw3.weight, 1)
             + self.dw5.weight)
        b = self.dw1.bias + self.dw3.bias + self.dw5.bias
        y = engine.conv2d(x, w, b, padding=2, groups=self.channels)
        y = self.pw2(self.grn(gelu(self.pw1(self.norm(y)))))
        return x + y


class PatchCombine(Module):
    """Transposed convolution merging patches back to pixel-level logits."""

    def __init__(self, c: int, p: int, out_ch: int, rng, hidden: int = 32):
        super().__init__()
        self.up = ConvTranspose2d(c, hidden, p, rng, stride=p)
        self.bn = BatchNorm2d(hidden)
        self.final = Conv2d(hidden, out_ch, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.final(gelu(self.bn(self.up(x))))


class SubtractFusion(Module):
    """Baseline fusion: plain elementwise difference of the two branches."""

    def forward(self, t1: Tensor, t2: Tensor) -> Tensor:
        return t1 - t2


class ChangeDetector(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng([seed, 0x5AC])
        self.embed = PatchEmbed(cfg.in_ch, cfg.c, cfg.p, rng)
        self.extract = ModuleList(SrcBlock(cfg.c, rng) for _ in range(cfg.n1))
        if cfg.has_interaction:
            self.interactions = ModuleList(
                PerceptionInteraction(cfg.c, rng, shared=cfg.shared_credibility)
                for _ in range(cfg.n1))
        else:
            self.interactions = None
        if cfg.has_patch_fusion:
            fusion_cfg = FusionConfig(depth=cfg.c, minipatches=cfg.k,
                                      modes=cfg.m, learnable_mix=cfg.learnable_mix)
            self.fusion = PatchModeFusion(fusion_cfg, rng)
        else:
            self.fusion = SubtractFusion()
        self.predict = ModuleList(SrcBlock(cfg.c, rng) for _ in range(cfg.n2))
        self.combine = PatchCombine(cfg.c, cfg.p, cfg.out_ch, rng)
        self.landcover_head = ConvTranspose2d(
            cfg.c, cfg.landcover_classes, cfg.p, rng, stride=cfg.p)

    # ---------------------------------------------------------------- passes

    def extract_features(self, img1: Tensor, img2: Tensor,
                         noise_rng: np.random.Generator | None = None,
                         noise: np.ndarray | None = None):
        """Run the siamese extraction stage.

        Returns (x1, x2, noise_tap) where noise_tap is None unless the
        variant has interaction modules and noise injection was requested
        (training-time tap for the interaction-consistency loss).
        """
        x1 = self.embed(img1)
        x2 = self.embed(img2)
        tap = None
        want_tap = (self.interactions is not None
                    and (noise_rng is not None or noise is not None))
        site = self.cfg.loss1_block % self.cfg.n1
        for i, block in enumerate(self.extract):
            x1 = block(x1)
            x2 = block(x2)
            if self.interactions is not None:
                pim = self.interactions[i]
                if want_tap and i == site:
                    outputs, s_ori = pim.noise_pass(
                        x1, self.cfg.noise_sigma, rng=noise_rng, noise=noise)
                    tap = (outputs, s_ori)
                x1, x2 = pim(x1, x2)
        return x1, x2, tap

    def forward(self, img1: Tensor, img2: Tensor,
                noise_rng: np.random.Generator | None = None,
                noise: np.ndarray | None = None):
        """Returns (logits, aux) with aux = {"features": (x1, x2),
        "noise_tap": ((out1, out2), s_ori) or None}."""
        if img1.shape != img2.shape:
            raise ValueError(f"image pair shapes differ: {img1.shape} vs {img2.shape}")
        x1, x2, tap = self.extract_features(img1, img2, noise_rng, noise)
        fused = self.fusion(x1, x2)
        for block in self.predict:
            fused = block(fused)
        logits = self.combine(fused)
        return logits, {"features": (x1, x2), "noise_tap": tap}

    def predict_mask(self, img1: Tensor, img2: Tensor) -> np.ndarray:
        """Hard change mask (B, H, W) via argmax over class logits."""
        logits, _ = self.forward(img1, img2)
        return np.argmax(logits.data, axis=1)

    def change_probabilities(self, img1: Tensor, img2: Tensor) -> np.ndarray:
        logits, _ = self.forward(img1, img2)
        return softmax(logits, axis=1).data[:, 1]

    def landcover_posteriors(self, feat: Tensor) -> Tensor:
        """Per-pixel land-cover distribution from extraction features."""
        return softmax(self.landcover_head(feat), axis=1)


def count_parameters(model: Module) -> int:
    return model.num_parameters()


def parameter_breakdown(model: ChangeDetector) -> dict:
    """Parameter count per top-level stage."""
    groups = {}
    for name, p in model.named_parameters():
        groups.setdefault(name.split(".")[0], 0)
        groups[name.split(".")[0]] += p.data.size
    return groups
