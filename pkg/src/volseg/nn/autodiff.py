"""Minimal reverse-mode autodiff over numpy arrays.

Just enough machinery for a small convolutional encoder-decoder: elementwise
arithmetic with broadcasting, a few nonlinearities, reductions, shape ops,
2D convolution, and nearest-neighbor upsampling. Gradients are exact; the
test suite checks every op against central finite differences.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """Array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    # force numpy to defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def backward(self, grad=None):
        """Accumulate gradients of this (scalar) tensor into graph leaves."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = grad
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, pgrad in zip(node._parents, node._vjp(node.grad)):
                if not parent.requires_grad or pgrad is None:
                    continue
                if parent.grad is None:
                    parent.grad = pgrad.astype(parent.data.dtype, copy=True)
                else:
                    parent.grad += pgrad

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def powc(a, exponent: float) -> Tensor:
    """a ** exponent for a constant exponent."""
    a = as_tensor(a)
    out = a.data**exponent

    def vjp(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0)

    def vjp(g):
        return (g * (a.data > 0),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp; gradient is zero outside (lo, hi)."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)

    def vjp(g):
        return (g * ((a.data > lo) & (a.data < hi)),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.shape).copy(),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        count = a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out, _parents=tuple(tensors), _vjp=vjp)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.take(g, k, axis=axis) for k in range(len(tensors)))

    return Tensor(out, _parents=tuple(tensors), _vjp=vjp)


def channel(a, k: int) -> Tensor:
    """Select channel k of an NCHW tensor -> (N, H, W)."""
    a = as_tensor(a)
    out = a.data[:, k]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[:, k] = g
        return (full,)

    return Tensor(out, _parents=(a,), _vjp=vjp)


# --- convolution ---------------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def conv2d(x, w, b, stride: int = 1, padding: int | None = None) -> Tensor:
    """2D convolution, NCHW x (Cout, Cin, kh, kw) + (Cout,) bias.

    Default padding keeps 'same' spatial size for stride 1 and halves it for
    stride 2 with odd kernels. The im2col buffer is kept alive for the
    backward pass (memory for speed).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    n, cin, h, ww_ = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    pad = (kh - 1) // 2 if padding is None else padding
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (ww_ + 2 * pad - kw) // stride + 1
    if pad:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    w2d = w.data.reshape(cout, cin * kh * kw)
    out = np.matmul(w2d, cols).reshape(n, cout, ho, wo) + b.data.reshape(1, cout, 1, 1)

    def vjp(g):
        g = np.ascontiguousarray(g)
        g2d = g.reshape(n, cout, ho * wo)
        # batched gemms on views; BLAS consumes the transposes without copies
        gw = np.matmul(g2d, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        gb = g.sum(axis=(0, 2, 3))
        gcols = np.matmul(w2d.T, g2d).reshape(n, cin, kh, kw, ho, wo)
        if pad:
            gxp = np.zeros((n, cin, h + 2 * pad, ww_ + 2 * pad), dtype=g.dtype)
        else:
            gxp = np.zeros((n, cin, h, ww_), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += gcols[
                    :, :, i, j
                ]
        gx = gxp[:, :, pad : pad + h, pad : pad + ww_] if pad else gxp
        return gx, gw, gb

    return Tensor(out, _parents=(x, w, b), _vjp=vjp)


def instance_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over spatial axes with affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    n, c, h, w = x.shape
    mean = x.data.mean(axis=(2, 3), keepdims=True)
    var = x.data.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    gview = gamma.data.reshape(1, c, 1, 1)
    out = xhat * gview + beta.data.reshape(1, c, 1, 1)

    def vjp(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gh = g * gview
        m1 = gh.mean(axis=(2, 3), keepdims=True)
        m2 = (gh * xhat).mean(axis=(2, 3), keepdims=True)
        gx = inv * (gh - m1 - xhat * m2)
        return gx, ggamma, gbeta

    return Tensor(out, _parents=(x, gamma, beta), _vjp=vjp)


def upsample2x(x) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling of an NCHW tensor."""
    x = as_tensor(x)
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(g):
        n, c, h2, w2 = g.shape
        return (g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)

    return Tensor(out, _parents=(x,), _vjp=vjp)
