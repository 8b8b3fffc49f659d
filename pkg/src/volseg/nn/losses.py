"""Training objective: dice + binary cross-entropy, with best-of-three
selection over the secondary masks."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DICE_EPS = 1e-6  # smoothing; defines empty/empty dice loss as 0
BCE_DELTA = 1e-6  # probability clamp


def dice_per_sample(m: Tensor, g: np.ndarray) -> Tensor:
    """Per-sample dice loss 1 - 2*sum(m*g)/(sum(m^2)+sum(g^2)); (B,H,W) -> (B,)."""
    if m.shape != g.shape:
        raise ValueError(f"shape mismatch: probs {m.shape} vs target {np.shape(g)}")
    axes = tuple(range(1, len(m.shape)))
    g = np.asarray(g, dtype=m.dtype)
    inter = ad.tsum(m * g, axis=axes)
    denom = ad.tsum(m * m, axis=axes) + (g * g).sum(axis=axes)
    num = 2.0 * inter + DICE_EPS
    den = denom + DICE_EPS
    return 1.0 - num / den


def bce_per_sample(m: Tensor, g: np.ndarray) -> Tensor:
    """Per-sample mean binary cross-entropy with probability clamp; (B,H,W) -> (B,)."""
    if m.shape != g.shape:
        raise ValueError(f"shape mismatch: probs {m.shape} vs target {np.shape(g)}")
    axes = tuple(range(1, len(m.shape)))
    g = np.asarray(g, dtype=m.dtype)
    mc = ad.clip(m, BCE_DELTA, 1.0 - BCE_DELTA)
    ll = g * ad.log(mc) + (1.0 - g) * ad.log(1.0 - mc)
    return -ad.tmean(ll, axis=axes)


def dice_loss(m, g) -> float:
    """Scalar dice loss for a single mask of probabilities vs a binary target."""
    m = ad.as_tensor(m)
    mb = ad.reshape(m, (1,) + tuple(m.shape))
    return float(dice_per_sample(mb, np.asarray(g)[None]).data[0])


def bce_loss(m, g) -> float:
    """Scalar BCE for a single mask of probabilities vs a binary target."""
    m = ad.as_tensor(m)
    mb = ad.reshape(m, (1,) + tuple(m.shape))
    return float(bce_per_sample(mb, np.asarray(g)[None]).data[0])


def multimask_per_sample(probs: Tensor, g: np.ndarray) -> Tensor:
    """Loss per sample: (dice+bce)(primary) + min over the 3 secondaries.

    probs is (B,4,H,W); only the primary and the per-sample argmin secondary
    receive gradient.
    """
    if probs.shape[1] != 4:
        raise ValueError(f"expected 4 mask channels, got {probs.shape[1]}")
    g = np.asarray(g)
    primary = dice_per_sample(ad.channel(probs, 0), g) + bce_per_sample(ad.channel(probs, 0), g)
    sec = [
        dice_per_sample(ad.channel(probs, k), g) + bce_per_sample(ad.channel(probs, k), g)
        for k in (1, 2, 3)
    ]
    stacked = ad.stack(sec, axis=1)  # (B, 3)
    pick = np.argmin(stacked.data, axis=1)
    onehot = np.zeros_like(stacked.data)
    onehot[np.arange(len(pick)), pick] = 1.0
    best = ad.tsum(stacked * onehot, axis=1)
    return primary + best


def multimask_loss(logits: Tensor, g: np.ndarray) -> Tensor:
    """Batch-mean multimask loss from logits (B,4,H,W) and targets (B,H,W)."""
    probs = ad.sigmoid(logits)
    per = multimask_per_sample(probs, np.asarray(g))
    return ad.tmean(per)
