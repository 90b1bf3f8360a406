"""Confusion-count based evaluation: precision, recall, F1, OA, IoU.

ConfusionStats from disjoint tiles add associatively, so tiled evaluation
merges to exactly the whole-image result. Ratios with a zero denominator
are reported as 0 and flagged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CSV_HEADER = "model,dataset,precision,recall,f1,oa,iou,params"


@dataclass
class ConfusionStats:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @classmethod
    def from_masks(cls, pred: np.ndarray, gt: np.ndarray) -> "ConfusionStats":
        pred = np.asarray(pred).astype(bool)
        gt = np.asarray(gt).astype(bool)
        if pred.shape != gt.shape:
            raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
        return cls(
            tp=int(np.sum(pred & gt)),
            fp=int(np.sum(pred & ~gt)),
            tn=int(np.sum(~pred & ~gt)),
            fn=int(np.sum(~pred & gt)),
        )

    def __add__(self, other: "ConfusionStats") -> "ConfusionStats":
        return ConfusionStats(self.tp + other.tp, self.fp + other.fp,
                              self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricReport:
    precision: float
    recall: float
    f1: float
    oa: float
    iou: float
    undefined: tuple = field(default_factory=tuple)  # flagged zero-denominator ratios

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall,
                "f1": self.f1, "oa": self.oa, "iou": self.iou}

    def csv_row(self, model: str, dataset: str, params: int | str = "") -> str:
        return (f"{model},{dataset},{self.precision:.4f},{self.recall:.4f},"
                f"{self.f1:.4f},{self.oa:.4f},{self.iou:.4f},{params}")


def _ratio(num: int, den: int, name: str, undefined: list) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def evaluate_stats(stats: ConfusionStats) -> MetricReport:
    undefined: list = []
    precision = _ratio(stats.tp, stats.tp + stats.fp, "precision", undefined)
    recall = _ratio(stats.tp, stats.tp + stats.fn, "recall", undefined)
    if precision + recall == 0.0:
        if "precision" not in undefined and "recall" not in undefined:
            undefined.append("f1")
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    oa = _ratio(stats.tp + stats.tn, stats.total, "oa", undefined)
    iou = _ratio(stats.tp, stats.tp + stats.fp + stats.fn, "iou", undefined)
    return MetricReport(precision, recall, f1, oa, iou, tuple(undefined))


def evaluate_masks(pred: np.ndarray, gt: np.ndarray) -> MetricReport:
    return evaluate_stats(ConfusionStats.from_masks(pred, gt))


def f1_from_pr(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def iou_from_f1(f1: float) -> float:
    """For binary masks IoU = F1 / (2 - F1)."""
    return f1 / (2.0 - f1)
