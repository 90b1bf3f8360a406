"""Module-by-module finite-difference gradient suite.

Each entry builds a small randomized instance of one network component or
loss term and checks its analytic gradients against central differences.
Shared by the `gradcheck` CLI subcommand and the acceptance tests.
"""

from __future__ import annotations

import numpy as np

from .engine import Tensor, gradcheck, softmax
from .engine.gradcheck import GradcheckResult
from .losses import (
    HybridLoss, change_probability, dice_loss, edge_loss, focal_loss,
    interaction_consistency_loss,
)
from .model import ChangeDetector, ModelConfig, PatchCombine, PatchEmbed, SrcBlock
from .pim import CredibilityGate, PerceptionInteraction
from .pmffm import FusionConfig, PatchModeFusion

TOL = 1e-4
FULL_MODEL_TOL = 1e-3


def _params(module):
    return list(dict(module.named_parameters()).values())


def _rand_probs(rng, shape):
    """Random class probabilities away from the clamp boundary."""
    logits = Tensor(rng.standard_normal(shape) * 0.7, requires_grad=True)
    return logits, softmax(logits, axis=1)


def gradient_suite(tiny: bool = False, seed: int = 0):
    rng = np.random.default_rng(seed)
    c = 4 if tiny else 6
    hw = 2 if tiny else 3
    rows = []

    gate = CredibilityGate(c, rng)
    t = Tensor(rng.standard_normal((2, c, hw, hw)), requires_grad=True)
    rows.append(("credibility", gradcheck(
        lambda: gate(t).sum(), [t] + _params(gate), tol=TOL)))

    pim = PerceptionInteraction(c, rng)
    t1 = Tensor(rng.standard_normal((1, c, hw, hw)), requires_grad=True)
    t2 = Tensor(rng.standard_normal((1, c, hw, hw)), requires_grad=True)

    def pim_loss():
        o1, o2 = pim(t1, t2)
        return (o1 * o1).mean() + (o2 * o2).mean()

    rows.append(("pim_forward", gradcheck(
        pim_loss, [t1, t2] + _params(pim), tol=TOL)))

    fus = PatchModeFusion(FusionConfig(depth=8, minipatches=2, modes=2), rng)
    f1 = Tensor(rng.standard_normal((1, 8, hw, hw)), requires_grad=True)
    f2 = Tensor(rng.standard_normal((1, 8, hw, hw)), requires_grad=True)
    rows.append(("mode_perception", gradcheck(
        lambda: (fus.mode_probabilities(
            Tensor(f1.data.reshape(1, -1, 4), requires_grad=False),
            Tensor(f2.data.reshape(1, -1, 4))) ** 2.0).sum(),
        [fus.perception_w, fus.perception_b], tol=TOL)))
    rows.append(("multi_head_fuse", gradcheck(
        lambda: (fus(f1, f2) ** 2.0).mean(), [f1, f2] + _params(fus), tol=TOL)))

    block = SrcBlock(c, rng)
    x = Tensor(rng.standard_normal((1, c, hw, hw)), requires_grad=True)
    rows.append(("src_block", gradcheck(
        lambda: (block(x) ** 2.0).mean(), [x] + _params(block), tol=TOL,
        max_entries=None if tiny else 32)))

    embed = PatchEmbed(3, 8, 4, rng)
    img = Tensor(rng.standard_normal((1, 3, 8, 8)), requires_grad=True)
    rows.append(("patch_embed", gradcheck(
        lambda: (embed(img) ** 2.0).mean(), [img] + _params(embed), tol=TOL,
        max_entries=48)))

    comb = PatchCombine(8, 4, 2, rng, hidden=4)
    y = Tensor(rng.standard_normal((1, 8, 2, 2)), requires_grad=True)
    rows.append(("patch_combine", gradcheck(
        lambda: (comb(y) ** 2.0).mean(), [y] + _params(comb), tol=TOL,
        max_entries=48)))

    gt = (rng.random((2, hw * 2, hw * 2)) < 0.4).astype(np.float64)
    logits, _ = _rand_probs(rng, (2, 2, hw * 2, hw * 2))
    rows.append(("focal_loss", gradcheck(
        lambda: focal_loss(softmax(logits, axis=1), gt), [logits], tol=TOL)))
    rows.append(("dice_loss", gradcheck(
        lambda: dice_loss(softmax(logits, axis=1), gt), [logits], tol=TOL)))
    rows.append(("edge_loss", gradcheck(
        lambda: edge_loss(softmax(logits, axis=1), gt, 4.0, 1), [logits], tol=TOL)))

    hybrid = HybridLoss()
    hybrid.s1.data += 0.3
    hybrid.s2.data -= 0.2
    rows.append(("hybrid_loss", gradcheck(
        lambda: hybrid(softmax(logits, axis=1), gt),
        [logits, hybrid.s1, hybrid.s2, hybrid.s3], tol=TOL)))

    s_ori = Tensor(rng.standard_normal((1, c, hw, hw)), requires_grad=True)
    noise = rng.standard_normal((1, c, hw, hw)) * 0.1

    def loss1():
        outputs, ref = pim.noise_pass(s_ori, 0.1, noise=noise)
        return interaction_consistency_loss(outputs, ref)

    rows.append(("interaction_consistency", gradcheck(
        loss1, [s_ori] + _params(pim), tol=TOL)))

    q_logits = Tensor(rng.standard_normal((1, 3, hw, hw)), requires_grad=True)
    q2 = softmax(Tensor(rng.standard_normal((1, 3, hw, hw))), axis=1)
    rows.append(("change_probability", gradcheck(
        lambda: change_probability(softmax(q_logits, axis=1), q2).sum(),
        [q_logits], tol=TOL)))

    rows.append(("full_model", full_model_gradcheck(seed=seed)))
    return rows


def full_model_gradcheck(seed: int = 0) -> GradcheckResult:
    """End-to-end training objective on the smallest legal configuration."""
    from .losses import extraction_supervision_loss, total_loss
    rng = np.random.default_rng(seed + 1)
    cfg = ModelConfig(c=8, p=4, n1=1, n2=1, k=2, m=2, landcover_classes=2)
    model = ChangeDetector(cfg, seed=seed)
    objective = HybridLoss()
    img1 = Tensor(rng.random((1, 3, 8, 8)), requires_grad=True)
    img2 = Tensor(rng.random((1, 3, 8, 8)), requires_grad=True)
    gt = (rng.random((1, 8, 8)) < 0.5).astype(np.float64)
    noise = rng.standard_normal((1, 8, 2, 2)) * 0.1

    def objective_fn():
        logits, aux = model(img1, img2, noise=noise)
        outputs, ref = aux["noise_tap"]
        loss1 = interaction_consistency_loss(outputs, ref)
        feat1, feat2 = aux["features"]
        loss2 = extraction_supervision_loss(feat1, feat2, model, gt, objective)
        loss3 = objective(softmax(logits, axis=1), gt)
        return total_loss(loss1, loss2, loss3)

    wrt = [img1, img2] + _params(model) + _params(objective)
    return gradcheck(objective_fn, wrt, tol=FULL_MODEL_TOL, max_entries=6,
                     rng=np.random.default_rng(seed + 2))
