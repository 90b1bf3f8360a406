"""Loss terms for training: focal, dice, and edge-weighted cross-entropy
combined with learnable uncertainty weights, an interaction-consistency
loss on the noise tap, and the Bayes change-probability supervision of the
extraction features.

All pixel losses take class probabilities of shape (B, 2, H, W) (rows
summing to 1 over the class axis) and an integer/binary ground-truth mask
of shape (B, H, W).
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .engine import Tensor, concat, log, maximum, sqrt
from .engine.nn import Module
from .engine.tensor import Parameter

PROB_FLOOR = 1e-12  # probabilities are clamped here before log


def _true_class_prob(probs: Tensor, gt: np.ndarray) -> Tensor:
    """Probability assigned to the correct class at every pixel."""
    gt = np.asarray(gt)
    p_change = probs[:, 1]
    p_keep = probs[:, 0]
    return p_change * gt + p_keep * (1.0 - gt)


def focal_loss(probs: Tensor, gt: np.ndarray, gamma: float = 2.0,
               alpha: float = 0.25) -> Tensor:
    """Mean over pixels of -alpha * (1 - p_t)^gamma * log(p_t)."""
    p_t = maximum(_true_class_prob(probs, gt), PROB_FLOOR)
    focal = (1.0 - p_t) ** gamma * log(p_t) * (-alpha)
    return focal.mean()


def dice_loss(probs: Tensor, gt: np.ndarray, eps: float = 1.0) -> Tensor:
    """1 - Dice overlap of the change-probability map, eps guards empty masks."""
    gt = np.asarray(gt)
    p = probs[:, 1]
    inter = (p * gt).sum()
    return 1.0 - (2.0 * inter + eps) / (p.sum() + float(gt.sum()) + eps)


def edge_weight_map(gt: np.ndarray, edge_lambda: float = 4.0,
                    edge_radius: int = 2) -> np.ndarray:
    """1 + lambda inside the dilated ground-truth boundary band.

    Boundary pixels are those with at least one 4-neighbor of the opposite
    class; the band extends edge_radius pixels in Chebyshev distance.
    """
    gt = np.asarray(gt).astype(bool)
    boundary = np.zeros_like(gt)
    boundary[..., 1:, :] |= gt[..., 1:, :] != gt[..., :-1, :]
    boundary[..., :-1, :] |= gt[..., :-1, :] != gt[..., 1:, :]
    boundary[..., :, 1:] |= gt[..., :, 1:] != gt[..., :, :-1]
    boundary[..., :, :-1] |= gt[..., :, :-1] != gt[..., :, 1:]
    if edge_radius > 0:
        size = 2 * edge_radius + 1
        footprint = np.ones((1,) * (gt.ndim - 2) + (size, size), dtype=bool)
        near = ndimage.maximum_filter(boundary, footprint=footprint,
                                      mode="constant", cval=False)
    else:
        near = boundary
    return 1.0 + edge_lambda * near


def edge_loss(probs: Tensor, gt: np.ndarray, edge_lambda: float = 4.0,
              edge_radius: int = 2) -> Tensor:
    """Cross-entropy with boundary pixels weighted up."""
    w = edge_weight_map(gt, edge_lambda, edge_radius)
    p_t = maximum(_true_class_prob(probs, gt), PROB_FLOOR)
    return (log(p_t) * (-w)).mean()


class HybridLoss(Module):
    """focal + dice + edge with learnable log-variance weights.

    Each term is scaled by exp(-s_i) and the regularizer (s1+s2+s3)/2 is
    added, the stable reparameterization of 1/sigma^2 weighting with a
    log(sigma) penalty; s_i = log(sigma_i^2), initialized to 0.
    """

    def __init__(self, focal_gamma: float = 2.0, focal_alpha: float = 0.25,
                 edge_lambda: float = 4.0, edge_radius: int = 2):
        super().__init__()
        self.focal_gamma = focal_gamma
        self.focal_alpha = focal_alpha
        self.edge_lambda = edge_lambda
        self.edge_radius = edge_radius
        self.s1 = Parameter(np.zeros(()))
        self.s2 = Parameter(np.zeros(()))
        self.s3 = Parameter(np.zeros(()))

    def forward(self, probs: Tensor, gt: np.ndarray) -> Tensor:
        from .engine import exp
        l_focal = focal_loss(probs, gt, self.focal_gamma, self.focal_alpha)
        l_dice = dice_loss(probs, gt)
        l_edge = edge_loss(probs, gt, self.edge_lambda, self.edge_radius)
        return (exp(-self.s1) * l_focal + exp(-self.s2) * l_dice
                + exp(-self.s3) * l_edge + (self.s1 + self.s2 + self.s3) * 0.5)

    def terms(self, probs: Tensor, gt: np.ndarray) -> dict:
        return {
            "focal": focal_loss(probs, gt, self.focal_gamma, self.focal_alpha),
            "dice": dice_loss(probs, gt),
            "edge": edge_loss(probs, gt, self.edge_lambda, self.edge_radius),
        }


def rms(t: Tensor) -> Tensor:
    return sqrt((t * t).mean())


def interaction_consistency_loss(outputs, s_ori: Tensor) -> Tensor:
    """Mean RMS distance between each noise-pass output and the clean signal."""
    total = None
    for out in outputs:
        term = rms(out - s_ori)
        total = term if total is None else total + term
    return total * (1.0 / len(outputs))


def change_probability(q1: Tensor, q2: Tensor) -> Tensor:
    """P(change) = 1 - sum_cls q1*q2, assuming independent posteriors.

    q1, q2 are per-branch land-cover posteriors (B, L, H, W) summing to 1
    over the class axis; agreement on a class means no change there.
    """
    if q1.shape != q2.shape:
        raise ValueError(f"posterior shapes differ: {q1.shape} vs {q2.shape}")
    if q1.shape[1] < 2:
        raise ValueError("need at least 2 land-cover classes")
    return 1.0 - (q1 * q2).sum(axis=1)


def extraction_supervision_loss(feat1: Tensor, feat2: Tensor, model,
                                gt: np.ndarray, hybrid: HybridLoss) -> Tensor:
    """Bayes change-probability supervision of the extraction stage."""
    q1 = model.landcover_posteriors(feat1)
    q2 = model.landcover_posteriors(feat2)
    pc = change_probability(q1, q2)
    B, H, W = pc.shape
    probs = concat([(1.0 - pc).reshape(B, 1, H, W), pc.reshape(B, 1, H, W)], axis=1)
    return hybrid(probs, gt)


def total_loss(loss1: Tensor | None, loss2: Tensor, loss3: Tensor) -> Tensor:
    """Sum of the three supervision terms; loss1 is absent for variants
    without interaction modules."""
    total = loss2 + loss3
    if loss1 is not None:
        total = total + loss1
    return total
