"""Segmentation metrics."""

from __future__ import annotations

import numpy as np

__all__ = ["mean_iu"]


def mean_iu(pred: np.ndarray, gt: np.ndarray, n_labels: int, ignore_label: int = 255):
    """Per-class intersection over union and its mean.

    Classes absent from both prediction and ground truth are excluded from
    the mean (their per-class entry is NaN).  Pixels carrying the ignore
    label are excluded everywhere.
    """
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth differ in shape")
    valid = gt != ignore_label
    pred = pred[valid]
    gt = gt[valid]
    iu = np.full(n_labels, np.nan)
    for c in range(n_labels):
        tp = int(np.sum((pred == c) & (gt == c)))
        fp = int(np.sum((pred == c) & (gt != c)))
        fn = int(np.sum((pred != c) & (gt == c)))
        denom = tp + fp + fn
        if denom > 0:
            iu[c] = tp / denom
    present = ~np.isnan(iu)
    if not present.any():
        raise ValueError("no class present in ground truth or prediction")
    return iu, float(np.mean(iu[present]))
