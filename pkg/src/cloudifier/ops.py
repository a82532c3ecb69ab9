"""Differentiable primitives on (batch, row, col, channel) tensors.

Every op is pure: inputs are never modified and results are freshly
allocated. The one exception is :func:`batch_norm` in training mode, which
updates the running statistics held by its :class:`BatchNormParams`.

Convolution kernels are stored as (kh, kw, c_in, c_out); transposed
convolution kernels as (kh, kw, c_out, c_in), i.e. the kernel of the forward
convolution they are the adjoint of.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Tensor, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _require_rank4(op: str, x: Tensor) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op} expects a rank-4 (n, h, w, c) tensor", x.shape)


def _same_pad(k: int) -> int:
    if k % 2 != 1:
        raise ShapeError(f"'same' padding needs an odd kernel size, got {k}")
    return (k - 1) // 2


def _out_size(size: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    """Return (output size, leading pad) for one spatial axis."""
    if padding == "same":
        return -(-size // stride), _same_pad(k)
    if padding == "valid":
        if size < k:
            raise ShapeError(f"input size {size} smaller than kernel {k} under 'valid' padding")
        return (size - k) // stride + 1, 0
    raise ValueError(f"unknown padding {padding!r}")


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, pad: tuple[int, int], out_hw: tuple[int, int]):
    """Receptive fields of zero-padded ``x`` as a (n, oh, ow, kh, kw, c) array."""
    n, h, w, c = x.shape
    oh, ow = out_hw
    ph, pw = pad
    need_h = (oh - 1) * stride + kh
    need_w = (ow - 1) * stride + kw
    if ph == 0 and pw == 0 and need_h <= h and need_w <= w:
        xp = x
    else:
        xp = np.zeros((n, max(need_h, h + ph), max(need_w, w + pw), c), dtype=x.dtype)
        xp[:, ph : ph + h, pw : pw + w] = x
    win = sliding_window_view(xp[:, :need_h, :need_w], (kh, kw), axis=(1, 2))
    return win[:, ::stride, ::stride].transpose(0, 1, 2, 4, 5, 3)


def _scatter(cols: np.ndarray, stride: int, pad: tuple[int, int], in_hw: tuple[int, int]) -> np.ndarray:
    """Adjoint of :func:`_windows`: add every window back onto the input grid."""
    n, oh, ow, kh, kw, c = cols.shape
    h, w = in_hw
    ph, pw = pad
    buf_h = max((oh - 1) * stride + kh, ph + h)
    buf_w = max((ow - 1) * stride + kw, pw + w)
    buf = np.zeros((n, buf_h, buf_w, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            buf[:, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, :, i, j]
    return buf[:, ph : ph + h, pw : pw + w].copy()


def _check_kernel(op: str, x: Tensor, kernel: Tensor, c_axis: int) -> None:
    _require_rank4(op, x)
    if kernel.ndim != 4:
        raise ShapeError(f"{op} kernel must be rank 4", kernel.shape)
    if kernel.shape[c_axis] != x.shape[3]:
        raise ShapeError(f"{op}: input channels do not match kernel", x.shape, kernel.shape)


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation with zero padding.

    With ``padding="same"`` the pad is (k - 1) / 2 on every side and the output
    is ceil(in / stride) along each spatial axis.
    """
    _check_kernel("conv2d", x, kernel, 2)
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    kh, kw, cin, cout = kernel.shape
    if bias is not None and bias.shape != (cout,):
        raise ShapeError("conv2d bias must have one value per output map", bias.shape, (cout,))
    n, h, w, _ = x.shape
    oh, ph = _out_size(h, kh, stride, padding)
    ow, pw = _out_size(w, kw, stride, padding)

    xd = x.data
    wm = kernel.data.reshape(kh * kw * cin, cout)
    if kh == kw == 1 and stride == 1 and ph == pw == 0:
        cols = xd.reshape(-1, cin)
    else:
        cols = _windows(xd, kh, kw, stride, (ph, pw), (oh, ow)).reshape(n * oh * ow, kh * kw * cin)
    out = cols @ wm
    if bias is not None:
        out += bias.data
    out = out.reshape(n, oh, ow, cout)

    def grad_fn(g):
        g2 = g.reshape(-1, cout)
        dk = (cols.T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        dcols = g2 @ wm.T
        if kh == kw == 1 and stride == 1 and ph == pw == 0:
            dx = dcols.reshape(x.shape)
        else:
            dx = _scatter(dcols.reshape(n, oh, ow, kh, kw, cin), stride, (ph, pw), (h, w))
        grads = [dx, dk]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    inputs = [x, kernel] if bias is None else [x, kernel, bias]
    return make_result("conv2d", out, inputs, grad_fn)


def transpose_pad(k: int, stride: int) -> int:
    """Leading crop of a transposed convolution.

    Odd kernels mirror conv2d's 'same' padding so the op is the exact adjoint
    of :func:`conv2d`; even kernels (the 2s upsampling kernels) are centred on
    the s x s output cell each input pixel covers.
    """
    if k % 2:
        return (k - 1) // 2
    return max(k - stride, 0) // 2


def conv2d_transpose(x: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    """Transposed ("backward") convolution upscaling H x W to sH x sW.

    Scatter-accumulates a copy of the kernel weighted by every input value.
    It is the adjoint of a stride-``stride`` :func:`conv2d` that uses the same
    kernel and the padding given by :func:`transpose_pad`.
    """
    _check_kernel("conv2d_transpose", x, kernel, 3)
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    kh, kw, cout, cin = kernel.shape
    n, h, w, _ = x.shape
    ph, pw = transpose_pad(kh, stride), transpose_pad(kw, stride)
    oh, ow = h * stride, w * stride

    xd = x.data.reshape(-1, cin)
    km = kernel.data.transpose(3, 0, 1, 2).reshape(cin, kh * kw * cout)
    cols = (xd @ km).reshape(n, h, w, kh, kw, cout)
    out = _scatter(cols, stride, (ph, pw), (oh, ow))

    def grad_fn(g):
        gcols = _windows(g, kh, kw, stride, (ph, pw), (h, w)).reshape(n * h * w, kh * kw * cout)
        dx = (gcols @ km.T).reshape(x.shape)
        dk = None
        if kernel.requires_grad:
            dk = (xd.T @ gcols).reshape(cin, kh, kw, cout).transpose(1, 2, 3, 0)
        return dx, dk

    return make_result("conv2d_transpose", out, [x, kernel], grad_fn)


def depthwise_conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """Per-channel spatial filtering; ``kernel`` has shape (kh, kw, c)."""
    _require_rank4("depthwise_conv2d", x)
    if kernel.ndim != 3 or kernel.shape[2] != x.shape[3]:
        raise ShapeError("depthwise kernel must be (kh, kw, c) with one filter per input channel", x.shape, kernel.shape)
    kh, kw, c = kernel.shape
    n, h, w, _ = x.shape
    oh, ph = _out_size(h, kh, stride, padding)
    ow, pw = _out_size(w, kw, stride, padding)
    need_h = (oh - 1) * stride + kh
    need_w = (ow - 1) * stride + kw
    xp = np.zeros((n, max(need_h, h + ph), max(need_w, w + pw), c), dtype=x.dtype)
    xp[:, ph : ph + h, pw : pw + w] = x.data
    kd = kernel.data
    out = np.zeros((n, oh, ow, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i : i + stride * oh : stride, j : j + stride * ow : stride] * kd[i, j]

    def grad_fn(g):
        dxp = np.zeros_like(xp)
        dk = np.empty_like(kd)
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None), slice(i, i + stride * oh, stride), slice(j, j + stride * ow, stride))
                dxp[sl] += g * kd[i, j]
                dk[i, j] = np.einsum("nhwc,nhwc->c", xp[sl], g)
        return dxp[:, ph : ph + h, pw : pw + w].copy(), dk

    return make_result("depthwise_conv2d", out, [x, kernel], grad_fn)


def depthwise_separable_conv2d(
    x: Tensor,
    depthwise: Tensor,
    pointwise: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
) -> Tensor:
    """Depthwise (kh, kw, c_in) filtering then 1x1 mixing with (1, 1, c_in, c_out).

    The stride applies to the depthwise stage.
    """
    if pointwise.ndim != 4 or pointwise.shape[:2] != (1, 1):
        raise ShapeError("pointwise kernel must be (1, 1, c_in, c_out)", pointwise.shape)
    return conv2d(depthwise_conv2d(x, depthwise, stride=stride), pointwise, bias)


@dataclass
class BatchNormParams:
    """Per-channel scale/shift plus running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM
    training: bool = True

    @classmethod
    def create(cls, channels: int, name: str = "bn") -> "BatchNormParams":
        return cls(
            gamma=Tensor(np.ones(channels), requires_grad=True, name=f"{name}.gamma"),
            beta=Tensor(np.zeros(channels), requires_grad=True, name=f"{name}.beta"),
            running_mean=np.zeros(channels, dtype=np.float32),
            running_var=np.ones(channels, dtype=np.float32),
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def batch_norm(x: Tensor, p: BatchNormParams) -> Tensor:
    """Normalize each channel over (n, h, w).

    Training mode uses batch statistics and folds them into the running
    estimates (``running = momentum * running + (1 - momentum) * batch``);
    inference mode uses the running estimates.
    """
    _require_rank4("batch_norm", x)
    c = x.shape[3]
    if p.channels != c:
        raise ShapeError("batch_norm parameters do not match input channels", x.shape, p.gamma.shape)
    m = x.shape[0] * x.shape[1] * x.shape[2]
    if m == 0:
        raise ShapeError("batch_norm on an empty batch", x.shape)
    xd = x.data
    gamma, beta = p.gamma.data, p.beta.data

    if not p.training:
        inv_std = (1.0 / np.sqrt(p.running_var.astype(xd.dtype) + p.eps)).astype(xd.dtype)
        scale = gamma * inv_std
        out = (xd - p.running_mean.astype(xd.dtype)) * scale + beta
        xhat = (xd - p.running_mean.astype(xd.dtype)) * inv_std

        def grad_infer(g):
            return g * scale, np.einsum("nhwc,nhwc->c", g, xhat), g.sum(axis=(0, 1, 2))

        return make_result("batch_norm", out, [x, p.gamma, p.beta], grad_infer)

    mean = xd.mean(axis=(0, 1, 2))
    centered = xd - mean
    var = np.mean(centered * centered, axis=(0, 1, 2))
    inv_std = (1.0 / np.sqrt(var + p.eps)).astype(xd.dtype)
    xhat = centered * inv_std
    out = xhat * gamma + beta
    p.running_mean[...] = p.momentum * p.running_mean + (1.0 - p.momentum) * mean
    p.running_var[...] = p.momentum * p.running_var + (1.0 - p.momentum) * var

    def grad_train(g):
        dgamma = np.einsum("nhwc,nhwc->c", g, xhat)
        dbeta = g.sum(axis=(0, 1, 2))
        dxhat_sum = dbeta * gamma
        dxhat_dot = dgamma * gamma
        dx = (g * gamma - (dxhat_sum + xhat * dxhat_dot) / m) * inv_std
        return dx, dgamma, dbeta

    return make_result("batch_norm", out, [x, p.gamma, p.beta], grad_train)


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at 0 is taken as 0."""
    mask = x.data > 0
    return make_result("relu", np.where(mask, x.data, 0).astype(x.dtype), [x], lambda g: (g * mask,))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("add requires identical shapes", a.shape, b.shape)
    return make_result("add", a.data + b.data, [a, b], lambda g: (g, g))


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Stack along the channel axis, preserving input order."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    for t in tensors:
        _require_rank4("concat_channels", t)
        if t.shape[:3] != tensors[0].shape[:3]:
            raise ShapeError("concat_channels requires identical (n, h, w)", tensors[0].shape, t.shape)
    splits = np.cumsum([t.shape[3] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=3)
    return make_result("concat_channels", out, tensors, lambda g: tuple(np.split(g, splits, axis=3)))


def softmax_per_fiber(logits: Tensor) -> Tensor:
    """Softmax over the class axis independently at every (n, h, w) position."""
    if logits.shape[-1] < 2:
        raise ShapeError("softmax needs at least two classes", logits.shape)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (probs * (g - np.sum(g * probs, axis=-1, keepdims=True)),)

    return make_result("softmax_per_fiber", probs, [logits], grad_fn)


def reduce_sum(x: Tensor, weights: Optional[np.ndarray] = None) -> Tensor:
    """Scalar sum of ``x`` (optionally of ``x * weights`` for a constant array)."""
    if weights is None:
        total = x.data.sum(dtype=np.float64)
        grad = lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),)  # noqa: E731
    else:
        if weights.shape != x.shape:
            raise ShapeError("reduce_sum weights must match the tensor", x.shape, weights.shape)
        total = np.sum(x.data * weights, dtype=np.float64)
        grad = lambda g: ((g * weights).astype(x.dtype),)  # noqa: E731
    return make_result("reduce_sum", np.asarray(total), [x], grad)
