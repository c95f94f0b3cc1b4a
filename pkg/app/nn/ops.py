"""Differentiable operators of the SC-attention network.

All ops accept optional leading batch axes: image-like tensors are
``(..., H, W, C)`` and token matrices are ``(..., C, L)``.
"""
from typing import Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.core.exceptions import ConfigError, DimensionMismatchError
from app.nn.tensor import Tensor, record

Operand = Union[Tensor, float, int, np.ndarray]


def _as_tensor(x: Operand, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``"""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Operand) -> Tensor:
    b = _as_tensor(b, a)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", (a, b), a.data + b.data, backward)


def sub(a: Tensor, b: Operand) -> Tensor:
    b = _as_tensor(b, a)

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return record("sub", (a, b), a.data - b.data, backward)


def mul(a: Tensor, b: Operand) -> Tensor:
    b = _as_tensor(b, a)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record("mul", (a, b), a.data * b.data, backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, x.shape),)

    return record("sum", (x,), np.asarray(x.data.sum(), dtype=x.dtype), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    def backward(g):
        return (g.reshape(x.shape),)

    return record("reshape", (x,), x.data.reshape(tuple(shape)), backward)


def swap_last(x: Tensor) -> Tensor:
    """Transpose the two trailing axes"""
    def backward(g):
        return (np.swapaxes(g, -1, -2),)

    return record("swap_last", (x,), np.swapaxes(x.data, -1, -2), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return record("relu", (x,), np.where(mask, x.data, 0).astype(x.dtype), backward)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Stride-1 cross-correlation with 'same' zero padding (pad 1 for 3x3 kernels)"""
    if x.ndim < 3:
        raise DimensionMismatchError(f"conv2d input must be (..., H, W, C), got {x.shape}", [x.shape])
    kh, kw, cin, cout = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d supports odd kernel sizes only, got {kh}x{kw}")
    if x.shape[-1] != cin:
        raise DimensionMismatchError(
            f"conv2d channel mismatch: input has {x.shape[-1]}, kernel expects {cin}", [x.shape, kernel.shape]
        )
    if bias.shape != (cout,):
        raise DimensionMismatchError(f"conv2d bias must be ({cout},), got {bias.shape}", [bias.shape])

    lead = x.shape[:-3]
    h, w = x.shape[-3], x.shape[-2]
    ph, pw = kh // 2, kw // 2
    nd = x.ndim
    pad = [(0, 0)] * (nd - 3) + [(ph, ph), (pw, pw), (0, 0)]
    xp = np.pad(x.data, pad)
    windows = sliding_window_view(xp, (kh, kw), axis=(nd - 3, nd - 2))
    # (..., H, W, C, kh, kw) -> (..., H, W, kh, kw, C)
    perm = tuple(range(nd - 3)) + (nd - 3, nd - 2, nd, nd + 1, nd - 1)
    cols = np.ascontiguousarray(windows.transpose(perm)).reshape(-1, kh * kw * cin)
    k2 = kernel.data.reshape(kh * kw * cin, cout)
    out = (cols @ k2).reshape(*lead, h, w, cout) + bias.data

    def backward(g):
        g2 = g.reshape(-1, cout)
        d_kernel = (cols.T @ g2).reshape(kernel.shape)
        d_bias = g2.sum(axis=0)
        d_cols = (g2 @ k2.T).reshape(*lead, h, w, kh, kw, cin)
        d_xp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                d_xp[..., i:i + h, j:j + w, :] += d_cols[..., i, j, :]
        d_x = d_xp[..., ph:ph + h, pw:pw + w, :]
        return d_x, d_kernel, d_bias

    return record("conv2d", (x, kernel, bias), out, backward)


def fcl(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-token linear map: out = W x + b on (..., C, L) token matrices"""
    cout, cin = weight.shape
    if x.ndim < 2 or x.shape[-2] != cin:
        raise DimensionMismatchError(f"fcl expects (..., {cin}, L), got {x.shape}", [x.shape, weight.shape])
    if bias.shape != (cout,):
        raise DimensionMismatchError(f"fcl bias must be ({cout},), got {bias.shape}", [bias.shape])
    out = np.matmul(weight.data, x.data) + bias.data[:, np.newaxis]

    def backward(g):
        d_x = np.matmul(weight.data.T, g)
        d_w = np.einsum("...ol,...cl->oc", g, x.data)
        d_b = g.reshape(-1, cout, g.shape[-1]).sum(axis=(0, 2))
        return d_x, d_w, d_b

    return record("fcl", (x, weight, bias), out, backward)


def global_softmax(a: Tensor) -> Tensor:
    """Softmax over all entries of each trailing (L, L) matrix.

    Entries lie in [0, 1] and sum to 1; a logit far below the maximum underflows to exactly 0.
    """
    if a.ndim < 2:
        raise DimensionMismatchError(f"global_softmax expects (..., L, L), got {a.shape}", [a.shape])
    axes = (-2, -1)
    e = np.exp(a.data - a.data.max(axis=axes, keepdims=True))
    s = e / e.sum(axis=axes, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axes, keepdims=True)),)

    return record("global_softmax", (a,), s, backward)


def matmul_t(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionMismatchError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}", [a.shape, b.shape]
        )
    out = np.matmul(a.data, b.data)

    def backward(g):
        d_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        d_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(d_a, a.shape), _unbroadcast(d_b, b.shape)

    return record("matmul", (a, b), out, backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack channels of b after those of a"""
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionMismatchError(
            f"concat_channels spatial mismatch: {a.shape} vs {b.shape}", [a.shape, b.shape]
        )
    c1 = a.shape[-1]

    def backward(g):
        return g[..., :c1], g[..., c1:]

    return record("concat", (a, b), np.concatenate([a.data, b.data], axis=-1), backward)


def nmse_ratio(pred: Tensor, label: np.ndarray) -> Tensor:
    """Mean over the leading batch axis of ||label - pred||^2 / ||label||^2"""
    label = np.asarray(label, dtype=pred.dtype)
    if label.shape != pred.shape:
        raise DimensionMismatchError(f"prediction {pred.shape} vs label {label.shape}", [pred.shape, label.shape])
    axes = tuple(range(1, pred.ndim))
    energy = (label * label).sum(axis=axes)
    if np.any(energy == 0):
        raise ConfigError("nmse: a label has zero norm")
    diff = pred.data - label
    ratios = (diff * diff).sum(axis=axes) / energy
    batch = pred.shape[0]
    shape = (batch,) + (1,) * (pred.ndim - 1)

    def backward(g):
        return (g * 2.0 * diff / (batch * energy.reshape(shape)),)

    return record("nmse", (pred,), np.asarray(ratios.mean(), dtype=pred.dtype), backward)
