"""Properties of the finite-difference gradient harness itself."""

import numpy as np
import pytest

from volseg.nn import autodiff as ad
from volseg.nn import gradcheck, losses
from volseg.nn.autodiff import Tensor
from volseg.nn.model import forward_batch, init_params
from volseg.rng import stream


def test_tiny_network_under_budget():
    cfg = gradcheck.tiny_config()
    from volseg.nn.model import param_count

    assert param_count(init_params(cfg)) <= 10_000


def test_max_rel_error_small():
    cfg = gradcheck.tiny_config()
    params = init_params(cfg, dtype=np.float64)
    params["head.w"].data += stream(1, "head").normal(0, 0.05, params["head.w"].shape)
    images, prompts, targets = gradcheck.make_check_batch(cfg, batch=2, seed=3)
    err = gradcheck.grad_check(params, images, prompts, targets, cfg, n_checks=60, seed=5)
    assert err <= 1e-4


def test_zero_loss_configuration_has_zero_gradient():
    # saturate every output at the positive clamp: target all-ones, huge bias
    cfg = gradcheck.tiny_config()
    params = init_params(cfg, dtype=np.float64)
    params["head.b"].data[:] = 50.0
    images, prompts, _ = gradcheck.make_check_batch(cfg, batch=2, seed=7)
    targets = np.ones((2, cfg.image_size, cfg.image_size), dtype=np.float64)
    for p in params.values():
        p.grad = None
    logits = forward_batch(params, images, prompts, cfg)
    loss = losses.multimask_loss(logits, targets)
    loss.backward()
    norm_sq = sum(
        float((p.grad**2).sum()) for p in params.values() if p.grad is not None
    )
    assert np.sqrt(norm_sq) <= 1e-6


def test_richardson_step_scaling():
    # central differences have O(h^2) truncation: growing h by 10 must grow
    # the FD error by ~100 on a smooth (relu-free) graph
    rng = stream(9, "richardson")
    x = rng.uniform(-1.0, 1.0, size=(6,))
    g = (rng.uniform(size=(6,)) > 0.5).astype(np.float64)

    def f(values: np.ndarray) -> float:
        t = Tensor(values)
        probs = ad.sigmoid(t * 1.7 + 0.3)
        pb = ad.reshape(probs, (1, 6))
        return float(
            (losses.dice_per_sample(pb, g[None]) + losses.bce_per_sample(pb, g[None])).data[0]
        )

    t = Tensor(x.copy(), requires_grad=True)
    probs = ad.sigmoid(t * 1.7 + 0.3)
    pb = ad.reshape(probs, (1, 6))
    ad.tsum(losses.dice_per_sample(pb, g[None]) + losses.bce_per_sample(pb, g[None])).backward()
    exact = t.grad.copy()

    idx = int(np.argmax(np.abs(exact)))
    errors = {}
    for h in (1e-2, 1e-1):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (f(xp) - f(xm)) / (2 * h)
        errors[h] = abs(fd - exact[idx])
    ratio = errors[1e-1] / max(errors[1e-2], 1e-15)
    assert 30.0 <= ratio <= 300.0  # ~100 for clean O(h^2)
