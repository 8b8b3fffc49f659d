"""Every autodiff op is checked against central finite differences (float64)."""

import numpy as np
import pytest

from volseg.nn import autodiff as ad
from volseg.nn.autodiff import Tensor
from volseg.rng import stream


def fd_check(build, *input_shapes, seed=0, eps=1e-6, tol=1e-7, positive=False):
    """Compare backward() grads of scalar build(*tensors) with central FD."""
    rng = stream(seed, "fd")
    arrays = []
    for shape in input_shapes:
        a = rng.uniform(0.2 if positive else -1.0, 1.0, size=shape)
        arrays.append(a)
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward()
    for t, a in zip(tensors, arrays):
        flat = t.data.reshape(-1)
        grad = t.grad.reshape(-1)
        for idx in range(0, flat.size, max(1, flat.size // 25)):
            orig = flat[idx]
            h = eps * max(1.0, abs(orig))
            flat[idx] = orig + h
            f_plus = float(build(*[Tensor(x.data) for x in tensors]).data)
            flat[idx] = orig - h
            f_minus = float(build(*[Tensor(x.data) for x in tensors]).data)
            flat[idx] = orig
            fd = (f_plus - f_minus) / (2 * h)
            assert grad[idx] == pytest.approx(fd, rel=1e-4, abs=tol)


def test_add_broadcast():
    fd_check(lambda a, b: ad.tsum((a + b) * (a + b)), (3, 4), (4,))


def test_sub_mul_div():
    fd_check(lambda a, b: ad.tsum(a * b - a / b), (2, 5), (2, 5), positive=True)


def test_powc_exp_log():
    fd_check(lambda a: ad.tsum(ad.powc(a, 1.7) + ad.exp(a) + ad.log(a)), (6,), positive=True)


def test_sigmoid():
    fd_check(lambda a: ad.tsum(ad.sigmoid(a) * ad.sigmoid(a)), (4, 4))


def test_relu_away_from_kink():
    rng = stream(1, "relu")
    a = rng.uniform(-1, 1, size=(5, 5))
    a[np.abs(a) < 0.05] = 0.5
    t = Tensor(a, requires_grad=True)
    ad.tsum(ad.relu(t) * 3.0).backward()
    expected = 3.0 * (a > 0)
    assert (t.grad == expected).all()

def test_clip_grad_zero_outside():
    a = Tensor(np.array([-2.0, 0.5, 2.0]), requires_grad=True)
    ad.tsum(ad.clip(a, 0.0, 1.0)).backward()
    assert (a.grad == np.array([0.0, 1.0, 0.0])).all()


def test_sum_axes_and_mean():
    fd_check(lambda a: ad.tsum(ad.tsum(a, axis=1) * ad.tmean(a, axis=1)), (3, 7))
    fd_check(lambda a: ad.tsum(ad.tmean(a, axis=(1, 2), keepdims=True) * a), (2, 3, 4))


def test_reshape_concat_stack_channel():
    def cat_square(a, b):
        joined = ad.concat([ad.reshape(a, (2, 6)), b], axis=1)
        return ad.tsum(joined * joined)

    fd_check(cat_square, (2, 3, 2), (2, 4))
    fd_check(lambda a, b: ad.tsum(ad.stack([a, b], axis=1) * ad.stack([b, a], axis=1)),
             (3,), (3,))
    fd_check(lambda a: ad.tsum(ad.channel(a, 1) * ad.channel(a, 1)), (2, 3, 4, 4))


@pytest.mark.parametrize("stride,cin,cout,size,k", [(1, 2, 3, 6, 3), (2, 3, 2, 8, 3), (1, 2, 2, 5, 1)])
def test_conv2d(stride, cin, cout, size, k):
    pad = (k - 1) // 2

    def build(x, w, b):
        return ad.tsum(ad.conv2d(x, w, b, stride=stride) * 1.5)

    fd_check(build, (2, cin, size, size), (cout, cin, k, k), (cout,), seed=stride)


def test_conv2d_channel_mismatch():
    x = Tensor(np.zeros((1, 3, 4, 4)))
    w = Tensor(np.zeros((2, 4, 3, 3)))
    with pytest.raises(ValueError):
        ad.conv2d(x, w, Tensor(np.zeros(2)))


def test_upsample2x():
    fd_check(lambda a: ad.tsum(ad.upsample2x(a) * ad.upsample2x(a)), (2, 3, 4, 4))

    x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
    up = ad.upsample2x(x)
    assert (up.data[0, 0] == np.array([[0, 0, 1, 1], [0, 0, 1, 1],
                                       [2, 2, 3, 3], [2, 2, 3, 3]])).all()


def test_instance_norm():
    def build(x, g, b):
        return ad.tsum(ad.instance_norm(x, g, b) * ad.instance_norm(x, g, b))

    fd_check(build, (2, 3, 4, 5), (3,), (3,), tol=1e-6)


def test_instance_norm_normalizes():
    rng = stream(2, "in")
    x = Tensor(rng.uniform(-5, 5, size=(2, 3, 8, 8)))
    out = ad.instance_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)))
    means = out.data.mean(axis=(2, 3))
    stds = out.data.std(axis=(2, 3))
    assert np.abs(means).max() < 1e-10
    assert np.abs(stds - 1.0).max() < 1e-3


def test_grad_accumulates_over_reuse():
    a = Tensor(np.array([2.0]), requires_grad=True)
    out = a * a + a * 3.0  # d/da = 2a + 3 = 7
    out.backward(np.ones(1))
    assert a.grad[0] == pytest.approx(7.0)


def test_backward_requires_scalar():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        (a * 2.0).backward()


def test_numpy_left_operand_defers():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    out = np.ones((2, 2)) * a  # must hit __rmul__, not numpy broadcasting
    assert isinstance(out, Tensor)
    assert out.shape == (2, 2)
