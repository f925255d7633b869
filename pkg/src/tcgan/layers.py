"""Layer primitives on ``[batch, time, channel]`` tensors.

Convolutions follow the discrete-convolution convention (the kernel is
flipped along time relative to cross-correlation) and use "same-ceil" zero
padding, so a strided convolution maps length ``L`` to ``ceil(L / stride)``.
The transposed convolution is the exact adjoint of that map on inputs of
length ``L * stride``.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .tensor import Tensor, as_tensor

LEAKY_SLOPE = 0.2


def same_ceil_padding(length: int, kernel_w: int, stride: int) -> tuple[int, int, int]:
    """Return ``(out_len, pad_left, pad_right)``; odd padding goes right."""
    out = math.ceil(length / stride)
    total = max((out - 1) * stride + kernel_w - length, 0)
    left = total // 2
    return out, left, total - left


def _windows(xpad: np.ndarray, kernel_w: int, stride: int, out_len: int) -> np.ndarray:
    """im2col: ``[B, Lp, C] -> [B*out_len, kernel_w*C]`` with a flipped kernel axis."""
    b, _, c = xpad.shape
    view = np.lib.stride_tricks.sliding_window_view(xpad, kernel_w, axis=1)
    view = view[:, : (out_len - 1) * stride + 1 : stride]  # [B, out, C, w]
    cols = view[..., ::-1].transpose(0, 1, 3, 2)  # [B, out, w, C]
    return np.ascontiguousarray(cols).reshape(b * out_len, kernel_w * c)


def _scatter_windows(dcols: np.ndarray, padded_len: int, stride: int) -> np.ndarray:
    """Adjoint of :func:`_windows`: ``[B, out, w, C] -> [B, Lp, C]``."""
    b, out_len, kernel_w, c = dcols.shape
    dx = np.zeros((b, padded_len, c), dtype=dcols.dtype)
    stop = (out_len - 1) * stride + 1
    for i in range(kernel_w):
        dx[:, kernel_w - 1 - i : kernel_w - 1 - i + stop : stride] += dcols[:, :, i]
    return dx


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int):
    b, length, cin = x.shape
    kw, _, cout = w.shape
    out_len, left, right = same_ceil_padding(length, kw, stride)
    xpad = np.pad(x, ((0, 0), (left, right), (0, 0))) if left or right else x
    cols = _windows(xpad, kw, stride, out_len)
    y = (cols @ w.reshape(kw * cin, cout)).reshape(b, out_len, cout)
    return y, cols, (left, right, xpad.shape[1])


def _conv_backward_data(dy: np.ndarray, w: np.ndarray, stride: int, geometry) -> np.ndarray:
    left, right, padded_len = geometry
    b, out_len, cout = dy.shape
    kw, cin, _ = w.shape
    dcols = (dy.reshape(b * out_len, cout) @ w.reshape(kw * cin, cout).T).reshape(b, out_len, kw, cin)
    dxpad = _scatter_windows(dcols, padded_len, stride)
    return dxpad[:, left : padded_len - right]


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """Strided 1-D convolution with same-ceil padding.

    ``out[b, t, o] = sum_i sum_c xpad[b, t*stride + i, c] * weight[w-1-i, c, o] + bias[o]``

    Parameters
    ----------
    x : Tensor, shape (B, L, Cin)
    weight : Tensor, shape (kernel_w, Cin, Cout)
    bias : Tensor, shape (Cout,), optional
    stride : int
    """
    x = as_tensor(x)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ValueError(f"conv1d channel mismatch: input {x.shape}, weight {weight.shape}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    xd, wd = x.data, weight.data
    kw, cin, cout = wd.shape
    y, cols, geometry = _conv_forward(xd, wd, stride)
    if bias is not None:
        y = y + bias.data

    def backward(g):
        g2 = g.reshape(-1, cout)
        dx = _conv_backward_data(g, wd, stride, geometry) if x.requires_grad else None
        dw = (cols.T @ g2).reshape(kw, cin, cout) if weight.requires_grad else None
        grads = [dx, dw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._record(y, parents, backward)


def conv1d_transpose(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 2) -> Tensor:
    """Fractionally-strided convolution mapping length ``L`` to ``L * stride``.

    With ``weight`` of shape ``(kernel_w, Cin, Cout)`` this equals the input
    gradient of :func:`conv1d` applied to a length ``L * stride`` signal with
    kernel ``weight.swapaxes(1, 2)``; i.e. the full transposed support cropped
    symmetrically to ``L * stride`` samples.
    """
    x = as_tensor(x)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ValueError(f"conv1d_transpose channel mismatch: input {x.shape}, weight {weight.shape}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    xd, wd = x.data, weight.data
    b, length, cin = xd.shape
    kw, _, cout = wd.shape
    out_len = length * stride
    _, left, right = same_ceil_padding(out_len, kw, stride)
    geometry = (left, right, out_len + left + right)
    # conv kernel K[w, cout, cin] = weight.swapaxes(1, 2); data-adjoint of conv with K
    k = np.ascontiguousarray(wd.transpose(0, 2, 1))
    y = _conv_backward_data(xd, k, stride, geometry)
    if bias is not None:
        y = y + bias.data

    def backward(g):
        gpad = np.pad(g, ((0, 0), (left, right), (0, 0))) if left or right else g
        cols = _windows(gpad, kw, stride, length)  # [B*L, kw*cout]
        x2 = xd.reshape(b * length, cin)
        dx = (cols @ k.reshape(kw * cout, cin)).reshape(b, length, cin) if x.requires_grad else None
        dw = None
        if weight.requires_grad:
            dk = (cols.T @ x2).reshape(kw, cout, cin)
            dw = dk.transpose(0, 2, 1)
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.reshape(-1, cout).sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._record(y, parents, backward)


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
    update_stats: bool = True,
) -> Tensor:
    """Per-channel batch normalisation over the batch and time axes.

    In training mode the batch statistics are used and, if ``update_stats``,
    the running arrays are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    x = as_tensor(x)
    xd = x.data
    c = xd.shape[-1]
    axes = tuple(range(xd.ndim - 1))
    if training:
        count = xd.size // c
        if count < 2:
            raise ValueError("batchnorm in training mode needs at least 2 values per channel")
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        if update_stats:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mean
            running_var *= momentum
            running_var += (1.0 - momentum) * var
    else:
        mean, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean) * inv
    gd = gamma.data
    y = xhat * gd + beta.data

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gd
        if training:
            dx = inv * (dxhat - dxhat.mean(axis=axes) - xhat * (dxhat * xhat).mean(axis=axes))
        else:
            dx = dxhat * inv
        return dx, dgamma, dbeta

    return Tensor._record(y.astype(xd.dtype, copy=False), (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._record(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    y = np.where(mask, x.data, x.data * x.dtype.type(slope))
    return Tensor._record(y, (x,), lambda g: (np.where(mask, g, g * g.dtype.type(slope)),))


def _stable_sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = _stable_sigmoid(x.data)
    return Tensor._record(s, (x,), lambda g: (g * s * (1.0 - s),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._record(s, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return Tensor._record(out, (x,), lambda g: (g - s * g.sum(axis=axis, keepdims=True),))


def maxpool1d(x: Tensor, pool_w: int = 2, stride: int = 1) -> Tensor:
    """Sliding-window max over time; ties resolve to the earliest position."""
    x = as_tensor(x)
    xd = x.data
    b, length, c = xd.shape
    if pool_w > length:
        raise ValueError(f"pool width {pool_w} exceeds series length {length}")
    if pool_w < 1 or stride < 1:
        raise ValueError("pool width and stride must be >= 1")
    out_len = (length - pool_w) // stride + 1
    view = np.lib.stride_tricks.sliding_window_view(xd, pool_w, axis=1)
    view = view[:, : (out_len - 1) * stride + 1 : stride]  # [B, out, C, w]
    arg = view.argmax(axis=-1)
    y = np.take_along_axis(view, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        dx = np.zeros_like(xd)
        pos = arg + (np.arange(out_len) * stride)[None, :, None]
        bi = np.arange(b)[:, None, None]
        ci = np.arange(c)[None, None, :]
        np.add.at(dx, (np.broadcast_to(bi, pos.shape), pos, np.broadcast_to(ci, pos.shape)), g)
        return (dx,)

    return Tensor._record(np.ascontiguousarray(y), (x,), backward)


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"dense dimension mismatch: input {x.shape}, weight {weight.shape}")
    y = x @ weight
    return y + bias if bias is not None else y


def flatten(x: Tensor) -> Tensor:
    """``[B, L, C] -> [B, L*C]`` in time-major order."""
    x = as_tensor(x)
    return x.reshape(x.shape[0], -1)


def reshape(x: Tensor, shape) -> Tensor:
    return as_tensor(x).reshape(tuple(shape))


# --------------------------------------------------------------------------
# Parameterised layers


def _normal(rng: np.random.Generator, shape, std: float, dtype) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Layer:
    """Base class: exposes named parameters and named buffers."""

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}


class Conv1D(Layer):
    def __init__(self, in_channels, out_channels, kernel_w=10, stride=2, rng=None, dtype=np.float64, init_std=0.02):
        if kernel_w < 1 or stride < 1:
            raise ValueError("kernel_w and stride must be >= 1")
        rng = rng if rng is not None else np.random.default_rng()
        self.stride = stride
        self.weight = _normal(rng, (kernel_w, in_channels, out_channels), init_std, dtype)
        self.bias = _zeros((out_channels,), dtype)

    @property
    def out_channels(self) -> int:
        return self.weight.shape[2]

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self.weight, self.bias, self.stride)

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}


class ConvTranspose1D(Conv1D):
    def __call__(self, x: Tensor) -> Tensor:
        return conv1d_transpose(x, self.weight, self.bias, self.stride)


class BatchNorm1D(Layer):
    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float64):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = _zeros((channels,), dtype)
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool, update_stats: bool = True) -> Tensor:
        return batchnorm1d(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training, self.momentum, self.eps, update_stats,
        )

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class Dense(Layer):
    def __init__(self, in_dim, out_dim, rng=None, dtype=np.float64, init_std=0.02):
        rng = rng if rng is not None else np.random.default_rng()
        self.weight = _normal(rng, (in_dim, out_dim), init_std, dtype)
        self.bias = _zeros((out_dim,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.weight, self.bias)

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}


def collect_parameters(layers: dict[str, Layer]) -> dict[str, Tensor]:
    out = {}
    for name, layer in layers.items():
        for pname, p in layer.parameters().items():
            out[f"{name}.{pname}"] = p
    return out


def collect_buffers(layers: dict[str, Layer]) -> dict[str, np.ndarray]:
    out = {}
    for name, layer in layers.items():
        for bname, buf in layer.buffers().items():
            out[f"{name}.{bname}"] = buf
    return out
