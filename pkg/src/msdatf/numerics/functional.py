"""Differentiable neural-network operations built on :class:`Tensor`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, StateError
from . import kernels
from .tensor import Tensor, as_tensor

CE_FLOOR = 1e-12


def relu(x):
    return as_tensor(x).relu()


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    out = as_tensor(x) @ weight
    return out + bias if bias is not None else out


def conv2d(x, weight, bias, padding=0):
    """2-d cross-correlation, stride 1, symmetric zero padding."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError("conv2d expects input (N,C,H,W) and kernel (Cout,Cin,k,k)")
    n, cin, h, w = x.shape
    cout, kcin, k, k2 = weight.shape
    if kcin != cin:
        raise DimensionError(f"conv2d channel mismatch: input has {cin}, kernel expects {kcin}")
    if k != k2 or k < 1:
        raise DimensionError("conv2d needs a square kernel with k >= 1")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise DimensionError(f"kernel {k} larger than padded input {hp}x{wp}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = kernels.im2col(xp, k)                       # N,Ho,Wo,Cin*k*k
    wmat = weight.data.reshape(cout, -1)               # Cout,Cin*k*k
    out = cols @ wmat.T                                # N,Ho,Wo,Cout
    if bias is not None:
        out = out + bias.data
    out_data = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def bw(g):
        go = g.transpose(0, 2, 3, 1)                   # N,Ho,Wo,Cout
        go2 = go.reshape(-1, cout)
        gw = (go2.T @ cols.reshape(-1, wmat.shape[1])).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gxp = kernels.col2im(go @ wmat, cin, hp, wp, k)
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        gb = go2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._make(out_data, parents, bw, "conv2d")


def maxpool2d(x, kernel, stride):
    """Max pooling; ties route the gradient to the first (row-major) maximum."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise DimensionError(f"pool kernel {kernel} larger than input {h}x{w}")
    out, arg = kernels.maxpool_forward(x.data, kernel, stride)

    def bw(g):
        return (kernels.maxpool_backward(g, arg, h, w, kernel, stride),)

    return Tensor._make(out, (x,), bw, "maxpool2d")


@dataclass
class RunningStats:
    """Per-channel running mean/variance for batch norm."""

    channels: int
    momentum: float = 0.1
    mean: np.ndarray = None
    var: np.ndarray = None
    initialized: bool = False

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.channels)
        if self.var is None:
            self.var = np.ones(self.channels)

    def update(self, batch_mean, batch_var_unbiased):
        m = self.momentum
        self.mean = (1.0 - m) * self.mean + m * batch_mean
        self.var = (1.0 - m) * self.var + m * batch_var_unbiased
        self.initialized = True


def batchnorm2d(x, gamma, beta, train, stats=None, eps=1e-5, update_stats=True):
    """Per-channel batch normalization over (N, H, W).

    In train mode the batch statistics are used and, when ``update_stats`` is
    set, folded into ``stats``. Eval mode requires initialized ``stats``.
    """
    x = as_tensor(x)
    c = x.shape[1]
    if train:
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        if m < 1:
            raise DimensionError("batchnorm needs at least one element per channel")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if stats is not None and update_stats:
            stats.update(mu, var * m / (m - 1) if m > 1 else var)
    else:
        if stats is None or not stats.initialized:
            raise StateError("batchnorm eval mode needs initialized running statistics")
        mu, var = stats.mean, stats.var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)

    def bw(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        ghat = g * gamma.data.reshape(1, c, 1, 1)
        if train:
            m = g.shape[0] * g.shape[2] * g.shape[3]
            s1 = ghat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (ghat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gx = inv_std.reshape(1, c, 1, 1) / m * (m * ghat - s1 - xhat * s2)
        else:
            gx = ghat * inv_std.reshape(1, c, 1, 1)
        return gx, gg, gb

    return Tensor._make(out, (x, gamma, beta), bw, "batchnorm2d")


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    x = as_tensor(x)
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = xhat * gamma.data + beta.data

    def bw(g):
        red = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=red)
        gb = g.sum(axis=red)
        ghat = g * gamma.data
        s1 = ghat.sum(axis=-1, keepdims=True)
        s2 = (ghat * xhat).sum(axis=-1, keepdims=True)
        gx = inv_std / d * (d * ghat - s1 - xhat * s2)
        return gx, gg, gb

    return Tensor._make(out, (x, gamma, beta), bw, "layer_norm")


def dropout(x, rate, train, rng=None):
    """Inverted dropout. Identity in eval mode or when ``rate == 0``."""
    x = as_tensor(x)
    if not train or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._make(s, (x,), bw, "softmax")


def cross_entropy(probs, labels):
    """Mean of ``-log p[label]`` over rows; probabilities floored at 1e-12."""
    probs = as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    n, classes = probs.shape
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise IndexError(f"label out of range [0, {classes})")
    rows = np.arange(n)
    picked = probs.data[rows, labels]
    clamped = np.maximum(picked, CE_FLOOR)
    loss = -np.log(clamped).mean()

    def bw(g):
        grad = np.zeros_like(probs.data)
        live = picked > CE_FLOOR
        grad[rows[live], labels[live]] = -g / (n * picked[live])
        return (grad,)

    return Tensor._make(np.array(loss), (probs,), bw, "cross_entropy")
