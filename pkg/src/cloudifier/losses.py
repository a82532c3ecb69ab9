"""Dense per-pixel objectives over softmax probability maps."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, make_result

# Probabilities are clamped to this floor before taking logs.
LOG_FLOOR = 1e-12


def _true_class_probs(probs: Tensor, labels: np.ndarray):
    if probs.ndim != 4:
        raise ShapeError("expected (n, h, w, C) probabilities", probs.shape)
    labels = np.asarray(labels)
    if labels.shape != probs.shape[:3]:
        raise ShapeError("label map must match the probability map's (n, h, w)", labels.shape, probs.shape)
    num_classes = probs.shape[3]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    idx = labels.astype(np.intp)[..., None]
    p_true = np.take_along_axis(probs.data, idx, axis=3)[..., 0]
    return idx, p_true


def dense_nll_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the true class over all N*H*W pixels."""
    idx, p_true = _true_class_probs(probs, labels)
    count = p_true.size
    clamped = np.maximum(p_true, LOG_FLOOR)
    loss = -np.sum(np.log(clamped.astype(np.float64))) / count

    def grad_fn(g):
        dp = np.zeros_like(probs.data)
        local = np.where(p_true > LOG_FLOOR, -1.0 / clamped, 0.0) * (g / count)
        np.put_along_axis(dp, idx, local[..., None].astype(dp.dtype), axis=3)
        return (dp,)

    return make_result("dense_nll_loss", np.asarray(loss), [probs], grad_fn)


def focal_dense_loss(
    probs: Tensor,
    labels: np.ndarray,
    gamma: float = 2.0,
    class_weights: Optional[np.ndarray] = None,
) -> Tensor:
    """Focal variant of :func:`dense_nll_loss`.

    Each pixel contributes ``-w[y] * (1 - p_y)**gamma * log(p_y)``; the sum is
    divided by N*H*W. ``gamma=0`` with unit weights is exactly the NLL.
    """
    if gamma < 0:
        raise ValueError(f"focal gamma must be >= 0, got {gamma}")
    if gamma == 0 and class_weights is None:
        # bit-identical to the plain objective, gradients included
        return dense_nll_loss(probs, labels)
    idx, p_true = _true_class_probs(probs, labels)
    count = p_true.size
    p = np.maximum(p_true.astype(np.float64), LOG_FLOOR)
    log_p = np.log(p)
    one_minus = np.clip(1.0 - p, 0.0, 1.0)
    modulation = one_minus**gamma if gamma else np.ones_like(p)
    if class_weights is None:
        alpha = 1.0
    else:
        class_weights = np.asarray(class_weights, dtype=np.float64)
        if class_weights.shape != (probs.shape[3],):
            raise ShapeError("class_weights must have one entry per class", class_weights.shape, (probs.shape[3],))
        alpha = class_weights[idx[..., 0]]
    loss = -np.sum(alpha * modulation * log_p) / count

    def grad_fn(g):
        # d/dp of -(1-p)^gamma log p, with the gamma*(1-p)^(gamma-1)*log p term
        # taken as its limit 0 at p = 1.
        d = -modulation / p
        if gamma:
            with np.errstate(divide="ignore", invalid="ignore"):
                extra = np.where(one_minus > 0, gamma * one_minus ** (gamma - 1.0) * log_p, 0.0)
            d = d + extra
        d = np.where(p_true > LOG_FLOOR, alpha * d, 0.0) * (g / count)
        dp = np.zeros_like(probs.data)
        np.put_along_axis(dp, idx, d[..., None].astype(dp.dtype), axis=3)
        return (dp,)

    return make_result("focal_dense_loss", np.asarray(loss), [probs], grad_fn)


def focal_modulation(p: np.ndarray, gamma: float) -> np.ndarray:
    """The (1 - p)**gamma factor applied to each pixel's cross-entropy term."""
    return np.clip(1.0 - np.asarray(p, dtype=np.float64), 0.0, 1.0) ** gamma
