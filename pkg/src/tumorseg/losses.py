"""Soft dice loss, focal loss, and their sum, with analytic gradients.

Every function returns (scalar_loss, d_loss/d_pred). Inputs are plain
arrays: 5-axis (B, C, D, H, W) probability/one-hot pairs are treated as
multi-class (dice averages the non-background channels, focal reads the
true-class probability per voxel); anything else is treated as a single
binary foreground map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0       # focal class weighting
    gamma: float = 2.0       # focal focusing exponent
    epsilon_dice: float = 1e-5
    p_clamp: float = 1e-7

    def __post_init__(self):
        if self.gamma < 0:
            raise LossError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 < self.p_clamp < 0.5:
            raise LossError(f"p_clamp must be in (0, 0.5), got {self.p_clamp}")


def _check_shapes(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise LossError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    return pred, truth


def _dice_one_class(p, t, eps):
    """1 - (2*sum(t*p)+eps)/(sum(p^2)+sum(t^2)+eps) and its gradient in p."""
    num = 2.0 * (t * p).sum() + eps
    den = (p * p).sum() + (t * t).sum() + eps
    loss = 1.0 - num / den
    grad = -(2.0 * t * den - num * 2.0 * p) / (den * den)
    return loss, grad


def soft_dice_loss(pred, truth, epsilon: float = 1e-5):
    """Overlap loss on predicted probabilities, no binarization.

    Multi-class inputs average the per-class dice over the non-background
    channels (channel 0 excluded); the smoothing epsilon makes empty-vs-empty
    masks contribute zero loss.
    """
    pred, truth = _check_shapes(pred, truth)
    if pred.ndim == 5:
        n_fg = pred.shape[1] - 1
        loss = 0.0
        grad = np.zeros_like(pred)
        for c in range(1, pred.shape[1]):
            lc, gc = _dice_one_class(pred[:, c], truth[:, c], epsilon)
            loss += lc / n_fg
            grad[:, c] = gc / n_fg
        return float(loss), grad
    loss, grad = _dice_one_class(pred, truth, epsilon)
    return float(loss), grad


def focal_loss(pred, truth, cfg: LossConfig = LossConfig()):
    """Mean over voxels of -alpha * (1 - p_t)**gamma * ln(p_t).

    p_t is the probability assigned to the voxel's true class; for a single
    binary map, p_t = pred where truth is 1 and 1 - pred elsewhere. pred is
    clamped to [p_clamp, 1 - p_clamp] and the clamp zeroes the gradient.
    """
    pred, truth = _check_shapes(pred, truth)
    lo, hi = cfg.p_clamp, 1.0 - cfg.p_clamp

    if pred.ndim == 5:
        pt_raw = (pred * truth).sum(axis=1)
        n = pt_raw.size
        pt = np.clip(pt_raw, lo, hi)
        dpt = _focal_dpt(pt, cfg) / n
        dpt *= (pt_raw > lo) & (pt_raw < hi)
        grad = truth * dpt[:, None]
    else:
        pt_raw = np.where(truth > 0.5, pred, 1.0 - pred)
        n = pt_raw.size
        pt = np.clip(pt_raw, lo, hi)
        dpt = _focal_dpt(pt, cfg) / n
        dpt *= (pt_raw > lo) & (pt_raw < hi)
        grad = np.where(truth > 0.5, dpt, -dpt)

    loss = float((-cfg.alpha * (1.0 - pt) ** cfg.gamma * np.log(pt)).mean())
    return loss, grad


def _focal_dpt(pt, cfg):
    """d/dp_t of -alpha (1-p_t)^gamma ln(p_t), elementwise."""
    one_m = 1.0 - pt
    if cfg.gamma == 0.0:
        return -cfg.alpha / pt
    return cfg.alpha * (cfg.gamma * one_m ** (cfg.gamma - 1.0) * np.log(pt)
                        - one_m ** cfg.gamma / pt)


def combined_loss(pred, truth, cfg: LossConfig = LossConfig()):
    """Unweighted sum of soft dice and focal losses; gradients add."""
    dice, dice_grad = soft_dice_loss(pred, truth, cfg.epsilon_dice)
    focal, focal_grad = focal_loss(pred, truth, cfg)
    return dice + focal, dice_grad + focal_grad


def one_hot_labels(label_cube: np.ndarray, dtype=np.float32) -> np.ndarray:
    """(p, p, p) labels in {0,1,2,4} -> (1, 4, p, p, p) one-hot channels."""
    lut = np.full(5, -1, dtype=np.int64)
    for ch, lab in enumerate((0, 1, 2, 4)):
        lut[lab] = ch
    labs = np.asarray(label_cube)
    if labs.max(initial=0) > 4 or np.any(lut[labs] < 0):
        raise LossError("label cube contains values outside {0, 1, 2, 4}")
    channels = lut[labs]
    out = np.zeros((1, 4) + labs.shape, dtype=dtype)
    np.put_along_axis(out, channels[None, None], 1.0, axis=1)
    return out
