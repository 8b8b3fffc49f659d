"""Finite-difference verification of the analytic gradients.

Runs the full training loss on a tiny network at float64 and compares the
backward pass against central differences on a random subset of parameters.
"""

from __future__ import annotations

import numpy as np

from ..rng import stream
from . import losses
from .autodiff import Tensor
from .model import ModelConfig, forward_batch, init_params


def tiny_config(seed: int = 0) -> ModelConfig:
    """A <=10^4-parameter model, small enough for exhaustive FD sweeps."""
    return ModelConfig(image_size=32, lowres_size=8, widths=(3, 5, 7), seed=seed)


def _loss_value(params, images, prompts, targets, config) -> float:
    logits = forward_batch(params, images, prompts, config)
    return float(losses.multimask_loss(logits, targets).data)


def grad_check(
    params: dict[str, Tensor],
    images: np.ndarray,
    prompts: np.ndarray,
    targets: np.ndarray,
    config: ModelConfig,
    n_checks: int = 200,
    eps: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Inputs must be float64 for the comparison to be meaningful.
    """
    for p in params.values():
        p.grad = None
    logits = forward_batch(params, images, prompts, config)
    loss = losses.multimask_loss(logits, targets)
    loss.backward()

    names = sorted(params)
    sizes = np.array([params[n].data.size for n in names])
    cum = np.cumsum(sizes)
    total = int(cum[-1])
    rng = stream(seed, "grad_check")
    picks = rng.choice(total, size=min(n_checks, total), replace=False)

    max_rel = 0.0
    for flat_idx in picks:
        t_idx = int(np.searchsorted(cum, flat_idx, side="right"))
        name = names[t_idx]
        local = int(flat_idx - (cum[t_idx] - sizes[t_idx]))
        tensor = params[name]
        flat = tensor.data.reshape(-1)
        orig = flat[local]
        h = eps * max(1.0, abs(orig))
        flat[local] = orig + h
        f_plus = _loss_value(params, images, prompts, targets, config)
        flat[local] = orig - h
        f_minus = _loss_value(params, images, prompts, targets, config)
        flat[local] = orig
        fd = (f_plus - f_minus) / (2 * h)
        analytic = 0.0 if tensor.grad is None else float(tensor.grad.reshape(-1)[local])
        rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-6)
        max_rel = max(max_rel, rel)
    return max_rel


def make_check_batch(
    config: ModelConfig, batch: int = 2, seed: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random images/prompt-channels/targets for gradient checking, float64."""
    rng = stream(seed, "grad_check_batch")
    images = rng.uniform(0, 1, size=(batch, 1, config.image_size, config.image_size))
    prompts = rng.uniform(0, 1, size=(batch, 4, config.lowres_size, config.lowres_size))
    targets = (
        rng.uniform(0, 1, size=(batch, config.image_size, config.image_size)) > 0.5
    ).astype(np.float64)
    return images, prompts, targets
