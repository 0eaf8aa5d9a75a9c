"""Neural-network operations for the autodiff engine.

Everything is plain numpy. Convolution lowers to an im2col matrix
product so BLAS carries the arithmetic; the backward pass reuses the
unfolded columns. Pooling is restricted to non-overlapping windows,
which keeps the gradient scatter a pure reshape.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, make_op


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlate an NCHW input with OIHW weights."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and weight")
    b, cin, h, w = x.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ShapeError(f"input has {cin} channels, weight expects {cin_w}")
    if stride < 1 or pad < 0:
        raise ShapeError("stride must be >= 1 and pad >= 0")
    if kh < 1 or kw < 1 or h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError("kernel does not fit the padded input")

    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        b * ho * wo, cin * kh * kw
    )
    wmat = weight.data.reshape(cout, -1)
    out = np.ascontiguousarray(
        (cols @ wmat.T).reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)
    )

    x_needs, w_needs = x.requires_grad, weight.requires_grad
    padded_shape, pdtype = xp.shape, xp.dtype

    def rule(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(b * ho * wo, cout)
        gw = (g2.T @ cols).reshape(weight.data.shape) if w_needs else None
        gx = None
        if x_needs:
            gcols = (g2 @ wmat).reshape(b, ho, wo, cin, kh, kw)
            gxp = np.zeros(padded_shape, dtype=pdtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = np.ascontiguousarray(gxp[:, :, pad : pad + h, pad : pad + w]) if pad else gxp
        return gx, gw

    return make_op("conv2d", (x, weight), out, rule)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)
    a = x

    def rule(g):
        return (g * (a.data > 0),)

    return make_op("relu", (a,), data, rule)


def max_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k-by-k max pooling (stride equal to the window)."""
    if x.data.ndim != 4:
        raise ShapeError("max_pool2d expects a 4-D input")
    b, c, h, w = x.data.shape
    if k < 1 or h % k or w % k:
        raise ShapeError(f"spatial dims {(h, w)} not divisible by window {k}")
    ho, wo = h // k, w // k
    win = x.data.reshape(b, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(
        b, c, ho, wo, k * k
    )
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def rule(g):
        gw = np.zeros((b, c, ho, wo, k * k), dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        return (gw.reshape(b, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w),)

    return make_op("max_pool2d", (x,), out, rule)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with x (B, F) and weight (K, F)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError("dense expects 2-D input and weight")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ShapeError(
            f"input features {x.data.shape[1]} != weight features {weight.data.shape[1]}"
        )
    if bias is not None and bias.data.shape != (weight.data.shape[0],):
        raise ShapeError("bias shape must match the output width")
    data = x.data @ weight.data.T
    if bias is not None:
        data = data + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def rule(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        if bias is None:
            return gx, gw
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return make_op("dense", inputs, data, rule)


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Channel-wise batch normalization for NCHW tensors.

    ``running_mean``/``running_var`` are plain arrays updated in place
    while training. The biased batch variance is used both to normalize
    and to update the running statistic.
    """
    if x.data.ndim != 4:
        raise ShapeError("batch_norm2d expects a 4-D input")
    b, c, h, w = x.data.shape
    for name, arr in (("gamma", gamma.data), ("beta", beta.data)):
        if arr.shape != (c,):
            raise ShapeError(f"{name} must have shape ({c},)")

    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    n = b * h * w

    def rule(g):
        dgamma = np.einsum("bchw,bchw->c", g, xhat) if gamma.requires_grad else None
        dbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxh = g * gamma.data[None, :, None, None]
            if training:
                s1 = gxh.sum(axis=(0, 2, 3))[None, :, None, None]
                s2 = np.einsum("bchw,bchw->c", gxh, xhat)[None, :, None, None]
                gx = (inv[None, :, None, None] / n) * (n * gxh - s1 - xhat * s2)
            else:
                gx = gxh * inv[None, :, None, None]
        return gx, dgamma, dbeta

    return make_op("batch_norm2d", (x, gamma, beta), out, rule)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy between softmax(logits) and integer labels."""
    if logits.data.ndim != 2:
        raise ShapeError("softmax_cross_entropy expects 2-D logits")
    y = np.asarray(labels)
    if y.shape != (logits.data.shape[0],):
        raise ShapeError("labels must be a vector matching the batch size")
    if y.size and (y.min() < 0 or y.max() >= logits.data.shape[1]):
        raise ShapeError("label outside the class range")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1)
    rows = np.arange(len(y))
    nll = np.log(denom) - z[rows, y]
    data = np.asarray(nll.mean(), dtype=logits.data.dtype)
    sm = ez / denom[:, None]

    def rule(g):
        gg = sm.copy()
        gg[rows, y] -= 1.0
        return (gg * (g / len(y)),)

    return make_op("softmax_xent", (logits,), data, rule)
