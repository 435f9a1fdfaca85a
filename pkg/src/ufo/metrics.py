"""Segmentation quality metrics: Precision, Jaccard, MAE, F-measure, and
threshold-swept PR / F curves (256 thresholds, saliency convention
beta^2 = 0.3).

Conventions for degenerate cases, pinned so tests are exact:
- empty prediction: precision 1 if the ground truth is also empty, else 0;
- empty ground truth: recall 1;
- Jaccard of two empty masks: 1;
- F-measure 0 whenever its denominator is 0.
Aggregation is per image first, then mean over the dataset.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

F_BETA_SQ = 0.3
NUM_THRESHOLDS = 256
BIN_THRESHOLD = 0.5


def _counts(pred_bin: np.ndarray, gt_bin: np.ndarray) -> tuple[int, int, int]:
    tp = int(np.sum(pred_bin & gt_bin))
    fp = int(np.sum(pred_bin & ~gt_bin))
    fn = int(np.sum(~pred_bin & gt_bin))
    return tp, fp, fn


def _precision(tp: int, fp: int, gt_any: bool) -> float:
    if tp + fp == 0:
        return 0.0 if gt_any else 1.0
    return tp / (tp + fp)


def _recall(tp: int, fn: int) -> float:
    return tp / (tp + fn) if tp + fn else 1.0


def _f_measure(precision: float, recall: float) -> float:
    denom = F_BETA_SQ * precision + recall
    if denom == 0.0:
        return 0.0
    return (1.0 + F_BETA_SQ) * precision * recall / denom


@dataclass
class MetricReport:
    precision: list[float]
    jaccard: list[float]
    mae: list[float]
    f_beta: list[float]
    mean_precision: float
    mean_jaccard: float
    mean_mae: float
    mean_f_beta: float
    pr_curve: list[tuple[float, float, float]] = field(default_factory=list)
    f_curve: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_image": {
                "precision": self.precision,
                "jaccard": self.jaccard,
                "mae": self.mae,
                "f_beta": self.f_beta,
            },
            "mean": {
                "precision": self.mean_precision,
                "jaccard": self.mean_jaccard,
                "mae": self.mean_mae,
                "f_beta": self.mean_f_beta,
            },
            "pr_curve": [list(p) for p in self.pr_curve],
            "f_curve": [list(p) for p in self.f_curve],
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def save_curves_csv(self, path) -> None:
        f_by_t = dict(self.f_curve)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "precision", "recall", "f"])
            for t, p, r in self.pr_curve:
                writer.writerow([f"{t:.8f}", f"{p:.8f}", f"{r:.8f}", f"{f_by_t[t]:.8f}"])


def evaluate(pred: np.ndarray, gt: np.ndarray, with_curves: bool = True) -> MetricReport:
    """Score soft predictions against binary masks, both (N, 1, H, W) or
    (N, H, W)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DataError(f"prediction shape {pred.shape} != mask shape {gt.shape}")
    pred = pred.reshape(pred.shape[0], -1)
    gt_bin = gt.reshape(gt.shape[0], -1) > 0.5

    precisions, jaccards, maes, fs = [], [], [], []
    for i in range(pred.shape[0]):
        pb = pred[i] > BIN_THRESHOLD
        gb = gt_bin[i]
        tp, fp, fn = _counts(pb, gb)
        p = _precision(tp, fp, gb.any())
        r = _recall(tp, fn)
        j = tp / (tp + fp + fn) if tp + fp + fn else 1.0
        precisions.append(p)
        jaccards.append(j)
        maes.append(float(np.abs(pred[i] - gt_bin[i]).mean()))
        fs.append(_f_measure(p, r))

    pr_curve: list[tuple[float, float, float]] = []
    f_curve: list[tuple[float, float]] = []
    if with_curves:
        for k in range(NUM_THRESHOLDS):
            t = k / (NUM_THRESHOLDS - 1)
            ps, rs = [], []
            for i in range(pred.shape[0]):
                pb = pred[i] > t
                gb = gt_bin[i]
                tp, fp, fn = _counts(pb, gb)
                ps.append(_precision(tp, fp, gb.any()))
                rs.append(_recall(tp, fn))
            mp, mr = float(np.mean(ps)), float(np.mean(rs))
            pr_curve.append((t, mp, mr))
            f_curve.append((t, _f_measure(mp, mr)))

    return MetricReport(
        precision=precisions, jaccard=jaccards, mae=maes, f_beta=fs,
        mean_precision=float(np.mean(precisions)),
        mean_jaccard=float(np.mean(jaccards)),
        mean_mae=float(np.mean(maes)),
        mean_f_beta=float(np.mean(fs)),
        pr_curve=pr_curve, f_curve=f_curve,
    )
