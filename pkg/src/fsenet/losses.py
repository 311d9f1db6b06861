"""Training objective: video-level base loss, frame focal alignment, weighted total."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm

PROB_EPS = 1e-8


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.05
    gamma: float = 2.0
    # per-term switches for the loss ablation
    frame: bool = True
    frame_glo: bool = True
    base: bool = True

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.gamma) < 0:
            raise ValueError("loss weights must be nonnegative")


def base_loss(y, y_hat) -> nm.Tensor:
    """-sum_c avg_t(y_hat_c) * log avg_t(y_c) over the sentiment columns."""
    y = nm.as_tensor(y)
    target = np.asarray(getattr(y_hat, "data", y_hat))
    if y.shape != target.shape:
        raise nm.ShapeError(f"base_loss: {y.shape} vs {target.shape}")
    C = y.shape[1] - 1
    avg_y = nm.clip(nm.mean(nm.slice_cols(y, 0, C), axis=0), PROB_EPS, np.inf)
    avg_t = target[:, :C].mean(axis=0)
    return -nm.tsum(nm.log(avg_y) * avg_t)


def focal_align(pred, target, gamma: float = 2.0) -> nm.Tensor:
    """Soft-target binary focal loss summed over columns, averaged over frames."""
    pred = nm.as_tensor(pred)
    q = np.asarray(getattr(target, "data", target), dtype=np.float64)
    if pred.shape != q.shape:
        raise nm.ShapeError(f"focal_align: prediction {pred.shape} vs target {q.shape}")
    p = nm.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    one_minus = 1.0 - p
    if gamma == 0:
        pos = nm.log(p) * q
        neg = nm.log(one_minus) * (1.0 - q)
    else:
        pos = nm.power(one_minus, gamma) * nm.log(p) * q
        neg = nm.power(p, gamma) * nm.log(one_minus) * (1.0 - q)
    per_frame = nm.tsum(pos + neg, axis=1)
    return -nm.mean(per_frame)


def total_loss(base, frame, frame_glo, sc, weights: LossWeights) -> nm.Tensor:
    total = nm.as_tensor(base) if weights.base else nm.Tensor(0.0)
    if weights.lambda1:
        if weights.frame:
            total = total + nm.as_tensor(frame) * weights.lambda1
        if weights.frame_glo:
            total = total + nm.as_tensor(frame_glo) * weights.lambda1
    if weights.lambda2:
        total = total + nm.as_tensor(sc) * weights.lambda2
    return total
