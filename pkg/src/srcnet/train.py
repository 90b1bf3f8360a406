"""Training loop, evaluation runner, and checkpoint round-tripping.

All randomness (shuffling, augmentation, noise injection) is derived from
(seed, epoch, step) so that training N epochs, checkpointing, and resuming
for M more reproduces train(N+M) bit-exactly in float64 mode.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import data as data_mod
from .engine import Tensor, no_grad, softmax, set_default_dtype
from .engine.nn import Module
from .engine.serialization import read_checkpoint, write_checkpoint
from .losses import (
    HybridLoss, extraction_supervision_loss, interaction_consistency_loss,
    total_loss,
)
from .metrics import ConfusionStats, MetricReport, evaluate_stats
from .model import ChangeDetector, ModelConfig
from .optim import AdamW


@dataclass
class TrainConfig:
    lr: float = 2e-3
    decay_factor: float = 0.8
    decay_every: int = 20
    batch_size: int = 8
    epochs: int = 60
    weight_decay: float = 0.01
    seed: int = 0
    precision: str = "f64"           # f64 | f32
    augment: bool = False
    eval_every: int = 1
    early_stop_f1: float = 0.0       # stop once validation F1 reaches this (0 = off)
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.precision not in ("f64", "f32"):
            raise ValueError("precision must be f64 or f32")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_checkpoint: str | None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Step decay: lr0 * factor^(epoch // period)."""
    return cfg.lr * cfg.decay_factor ** (epoch // cfg.decay_every)


class Objective(Module):
    """Owns the two hybrid-loss weight sets (extraction and prediction)."""

    def __init__(self):
        super().__init__()
        self.extraction = HybridLoss()
        self.prediction = HybridLoss()


def apply_precision(precision: str) -> None:
    set_default_dtype(np.float32 if precision == "f32" else np.float64)


def train_step(model: ChangeDetector, objective: Objective, batch,
               noise_rng) -> dict:
    x1, x2, masks = batch
    use_noise = model.interactions is not None
    logits, aux = model(x1, x2, noise_rng=noise_rng if use_noise else None)
    loss1 = None
    if aux["noise_tap"] is not None:
        outputs, s_ori = aux["noise_tap"]
        loss1 = interaction_consistency_loss(outputs, s_ori)
    feat1, feat2 = aux["features"]
    loss2 = extraction_supervision_loss(feat1, feat2, model, masks,
                                        objective.extraction)
    probs = softmax(logits, axis=1)
    loss3 = objective.prediction(probs, masks)
    loss = total_loss(loss1, loss2, loss3)
    loss.backward()
    return {
        "loss": loss.item(),
        "loss1": 0.0 if loss1 is None else loss1.item(),
        "loss2": loss2.item(),
        "loss3": loss3.item(),
    }


def evaluate(model: ChangeDetector, pairs, batch_size: int = 8,
             overlays_dir: str | None = None) -> tuple[MetricReport, ConfusionStats]:
    """Merge per-tile confusion counts over the dataset."""
    was_training = model.training
    model.eval()
    stats = ConfusionStats()
    if overlays_dir:
        os.makedirs(overlays_dir, exist_ok=True)
    with no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start:start + batch_size]
            x1, x2, masks = data_mod.collate(chunk)
            preds = model.predict_mask(x1, x2)
            for pred, pair in zip(preds, chunk):
                stats = stats + ConfusionStats.from_masks(pred, pair.mask)
                if overlays_dir:
                    data_mod.save_overlay(
                        os.path.join(overlays_dir, f"{pair.id}.png"),
                        pred, pair.mask, pair.img2)
    model.train(was_training)
    return evaluate_stats(stats), stats


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(path: str, model: ChangeDetector, objective=None,
                    opt: AdamW | None = None, epoch: int = 0,
                    train_cfg: TrainConfig | None = None) -> None:
    config = {"model": model.cfg.to_dict(), "epoch": epoch,
              "dtype": str(next(model.parameters()).data.dtype)}
    if train_cfg is not None:
        config["train"] = asdict(train_cfg)
    arrays = {f"model.{k}": v for k, v in model.state_dict().items()}
    if objective is not None:
        arrays.update({f"objective.{k}": v for k, v in objective.state_dict().items()})
    if opt is not None:
        arrays.update({f"opt.{k}": v for k, v in opt.state_dict().items()})
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    write_checkpoint(path, config, arrays)


def load_checkpoint(path: str, expect_cfg: ModelConfig | None = None):
    """Rebuild the model (and optional objective/optimizer states).

    Returns (model, config, arrays). A mismatch against expect_cfg raises
    with the differing fields listed.
    """
    config, arrays = read_checkpoint(path)
    cfg = ModelConfig.from_dict(config["model"])
    if expect_cfg is not None:
        diffs = {k: (v, config["model"][k]) for k, v in expect_cfg.to_dict().items()
                 if config["model"].get(k) != v}
        if diffs:
            raise ValueError(f"checkpoint incompatible with requested config; "
                             f"differing fields: {diffs}")
    apply_precision("f32" if config.get("dtype") == "float32" else "f64")
    model = ChangeDetector(cfg, seed=0)
    model.load_state_dict({k[len("model."):]: v for k, v in arrays.items()
                           if k.startswith("model.")})
    return model, config, arrays


# --------------------------------------------------------------------- training

@dataclass
class EpochLog:
    epoch: int
    lr: float
    loss: float
    loss1: float
    loss2: float
    loss3: float
    val_f1: float = float("nan")


def train(model: ChangeDetector, train_pairs, val_pairs, cfg: TrainConfig,
          objective: Objective | None = None, log=print,
          start_epoch: int = 0, opt: AdamW | None = None):
    """Train and checkpoint; returns (history, best_f1, paths)."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    if objective is None:
        objective = Objective()
    named = list(model.named_parameters())
    named += [("objective." + n, p) for n, p in objective.named_parameters()]
    if opt is None:
        opt = AdamW(named, lr=cfg.lr, weight_decay=cfg.weight_decay)
    last_path = os.path.join(cfg.out_dir, "last.ckpt")
    best_path = os.path.join(cfg.out_dir, "best.ckpt")
    log_path = os.path.join(cfg.out_dir, "train_log.csv")
    history: list[EpochLog] = []
    best_f1 = -1.0
    mode = "a" if start_epoch else "w"
    with open(log_path, mode) as logfh:
        if not start_epoch:
            logfh.write("epoch,lr,loss,loss1,loss2,loss3,val_f1\n")
        for epoch in range(start_epoch, cfg.epochs):
            lr = lr_schedule(epoch, cfg)
            order = np.random.default_rng([cfg.seed, epoch, 101]).permutation(
                len(train_pairs))
            sums = {"loss": 0.0, "loss1": 0.0, "loss2": 0.0, "loss3": 0.0}
            n_steps = 0
            t0 = time.time()
            for step_idx, start in enumerate(range(0, len(order), cfg.batch_size)):
                idxs = order[start:start + cfg.batch_size]
                chunk = [train_pairs[i] for i in idxs]
                if cfg.augment:
                    aug_rng = np.random.default_rng([cfg.seed, epoch, step_idx, 303])
                    chunk = [data_mod.augment_pair(p, aug_rng) for p in chunk]
                batch = data_mod.collate(chunk)
                noise_rng = np.random.default_rng([cfg.seed, epoch, step_idx, 202])
                parts = train_step(model, objective, batch, noise_rng)
                if not np.isfinite(parts["loss"]):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {step_idx}; "
                        f"last good checkpoint: {last_path}",
                        last_path if epoch > start_epoch else None)
                opt.step(lr)
                opt.zero_grad()
                for k in sums:
                    sums[k] += parts[k]
                n_steps += 1
            means = {k: v / max(n_steps, 1) for k, v in sums.items()}
            val_f1 = float("nan")
            if val_pairs and (epoch + 1) % cfg.eval_every == 0:
                report, _ = evaluate(model, val_pairs, cfg.batch_size)
                val_f1 = report.f1
                if val_f1 > best_f1:
                    best_f1 = val_f1
                    save_checkpoint(best_path, model, objective, opt,
                                    epoch + 1, cfg)
            entry = EpochLog(epoch, lr, means["loss"], means["loss1"],
                             means["loss2"], means["loss3"], val_f1)
            history.append(entry)
            logfh.write(f"{epoch},{lr:.6g},{means['loss']:.6f},"
                        f"{means['loss1']:.6f},{means['loss2']:.6f},"
                        f"{means['loss3']:.6f},{val_f1:.4f}\n")
            logfh.flush()
            save_checkpoint(last_path, model, objective, opt, epoch + 1, cfg)
            log(f"epoch {epoch:3d}  lr {lr:.2e}  loss {means['loss']:.4f} "
                f"(1: {means['loss1']:.4f} 2: {means['loss2']:.4f} "
                f"3: {means['loss3']:.4f})  val F1 {val_f1:.4f}  "
                f"[{time.time() - t0:.1f}s]")
            if cfg.early_stop_f1 and best_f1 >= cfg.early_stop_f1:
                log(f"early stop: validation F1 {best_f1:.4f} reached target "
                    f"{cfg.early_stop_f1}")
                break
    return history, best_f1, {"last": last_path, "best": best_path,
                              "log": log_path}


def resume(path: str, train_pairs, val_pairs, log=print):
    """Continue a checkpointed run to its configured epoch count."""
    model, config, arrays = load_checkpoint(path)
    cfg = TrainConfig(**config["train"])
    objective = Objective()
    objective.load_state_dict({k[len("objective."):]: v for k, v in arrays.items()
                               if k.startswith("objective.")})
    named = list(model.named_parameters())
    named += [("objective." + n, p) for n, p in objective.named_parameters()]
    opt = AdamW(named, lr=cfg.lr, weight_decay=cfg.weight_decay)
    opt.load_state_dict({k[len("opt."):]: v for k, v in arrays.items()
                         if k.startswith("opt.")})
    return train(model, train_pairs, val_pairs, cfg, objective, log=log,
                 start_epoch=int(config["epoch"]), opt=opt)
