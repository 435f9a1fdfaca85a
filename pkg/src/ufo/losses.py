"""Training objective: classification CE + weighted BCE + soft IoU.

The WBCE weights follow the printed form: the positive term carries the
positive-pixel ratio gamma and the negative term (1 - gamma). The
conventional swapped weighting is available behind ``swap_gamma``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .tensor import (Tensor, add, clamp, div, gather_lastdim, log, log_softmax, mul,
                     reduce_mean, reduce_sum, scale, sub)

logger = logging.getLogger(__name__)

_CLAMP_EPS = 1e-7
_clamp_warned = False


@dataclass
class LossBreakdown:
    cls: Tensor
    wbce: Tensor
    iou: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {"cls": self.cls.item(), "wbce": self.wbce.item(),
                "iou": self.iou.item(), "total": self.total.item()}


def loss_cls(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over images of -log softmax(logits)[label]."""
    labels = np.asarray(labels)
    n_classes = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"class labels must lie in [0, {n_classes}), got "
                        f"[{labels.min()}, {labels.max()}]")
    log_probs = log_softmax(logits, axis=1)
    picked = gather_lastdim(log_probs, labels.reshape(-1, 1).astype(np.int64))
    return scale(reduce_mean(picked), -1.0)


def _check_mask_pair(pred: Tensor, gt: np.ndarray) -> np.ndarray:
    gt = np.asarray(gt, dtype=pred.dtype)
    if gt.shape != pred.shape:
        raise DataError(f"mask shape {gt.shape} != prediction shape {pred.shape}")
    return gt


def _clamped(pred: Tensor) -> Tensor:
    global _clamp_warned
    n_out = int(((pred.data <= 0.0) | (pred.data >= 1.0)).sum())
    if n_out:
        # Saturated sigmoids are routine late in training; warn once, then
        # keep the record at debug level.
        level = logging.DEBUG if _clamp_warned else logging.WARNING
        logger.log(level, "clamped %d predicted probabilities into [%g, %g]",
                   n_out, _CLAMP_EPS, 1.0 - _CLAMP_EPS)
        _clamp_warned = True
    return clamp(pred, _CLAMP_EPS, 1.0 - _CLAMP_EPS)


def loss_wbce(pred: Tensor, gt: np.ndarray, swap_gamma: bool = False) -> Tensor:
    """Per-image weighted BCE, averaged over the batch.

    gamma is that image's positive-pixel ratio; the per-image mean over
    pixels equals a single global sum because all images share H*W.
    """
    gt = _check_mask_pair(pred, gt)
    n, _, h, w = pred.shape
    gamma = gt.reshape(n, -1).mean(axis=1).reshape(n, 1, 1, 1)
    if swap_gamma:
        w_pos, w_neg = (1.0 - gamma) * gt, gamma * (1.0 - gt)
    else:
        w_pos, w_neg = gamma * gt, (1.0 - gamma) * (1.0 - gt)
    p = _clamped(pred)
    terms = add(mul(Tensor(w_pos), log(p)), mul(Tensor(w_neg), log(sub(1.0, p))))
    return scale(reduce_sum(terms), -1.0 / (n * h * w))


def loss_iou(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Soft IoU loss, mean over images. Images where both prediction and
    ground truth are identically zero contribute zero loss."""
    gt = _check_mask_pair(pred, gt)
    inter = reduce_sum(mul(pred, Tensor(gt)), axis=(1, 2, 3))
    union = reduce_sum(sub(add(pred, Tensor(gt)), mul(pred, Tensor(gt))), axis=(1, 2, 3))
    # Degenerate images get inter/union = 1/1, i.e. zero loss, without
    # disturbing the gradients of the others.
    degenerate = Tensor((union.data == 0).astype(pred.dtype))
    ratio = div(add(inter, degenerate), add(union, degenerate))
    return reduce_mean(sub(1.0, ratio))


def total_loss(cls: Tensor, wbce: Tensor, iou: Tensor) -> LossBreakdown:
    return LossBreakdown(cls=cls, wbce=wbce, iou=iou, total=add(add(cls, wbce), iou))
