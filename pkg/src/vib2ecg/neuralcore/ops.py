"""Differentiable 1D layers on ``(batch, channels, length)`` tensors.

Convolutions are direct cross-correlations lowered onto a single
matrix multiply per call (an im2col view of the padded input). Shapes are
checked eagerly; nothing broadcasts silently.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor


def _check_3d(x, what="input"):
    if x.data.ndim != 3:
        raise ShapeError(f"{what} must be (batch, channels, length), got {x.shape}")


def _needs_grad(*ts):
    return any(t is not None and t.requires_grad for t in ts)


def conv1d(x, weight, bias=None, stride=1, padding="same"):
    """Cross-correlate ``x`` with ``weight`` of shape ``(out, in, k)``.

    ``padding`` is ``"same"`` (zero padding, odd kernels only, stride 1),
    ``"valid"`` or an integer number of zeros added on both sides.
    """
    x = as_tensor(x)
    _check_3d(x)
    w = weight.data
    if w.ndim != 3:
        raise ShapeError(f"weight must be (out, in, k), got {w.shape}")
    n, c_in, length = x.shape
    c_out, w_in, k = w.shape
    if w_in != c_in:
        raise ShapeError(f"weight expects {w_in} input channels, input has {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias must be ({c_out},), got {bias.shape}")
    if padding == "same":
        if k % 2 == 0 or stride != 1:
            raise ShapeError("'same' padding needs an odd kernel and stride 1")
        pad = k // 2
    elif padding == "valid":
        pad = 0
    else:
        pad = int(padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    padded_len = length + 2 * pad
    if padded_len < k:
        raise ShapeError("input shorter than kernel")
    out_len = (padded_len - k) // stride + 1

    # cols[c*k + j, b*out_len + l] = xp[b, c, l*stride + j]
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    cols = np.ascontiguousarray(win.transpose(1, 3, 0, 2)).reshape(c_in * k, n * out_len)
    w2 = w.reshape(c_out, c_in * k)
    out = np.ascontiguousarray((w2 @ cols).reshape(c_out, n, out_len).transpose(1, 0, 2))
    if bias is not None:
        out += bias.data[None, :, None]

    if not _needs_grad(x, weight, bias):
        return Tensor(out)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(c_out, n * out_len)
        gw = (g2 @ cols.T).reshape(w.shape) if weight.requires_grad else None
        gb = g2.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(c_in, k, n, out_len)
            gxp = np.zeros((c_in, n, padded_len), dtype=g.dtype)
            span = (out_len - 1) * stride + 1
            for j in range(k):
                gxp[:, :, j : j + span : stride] += gcols[:, j]
            gx = np.ascontiguousarray(gxp[:, :, pad : pad + length].transpose(1, 0, 2))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor(out, True, parents, lambda g: backward(g)[: len(parents)])


def transposed_conv1d(x, weight, bias=None, stride=2):
    """Transposed convolution with ``kernel == stride``; weight is ``(in, out, k)``.

    With the default kernel 2 / stride 2 the output is exactly twice as long
    as the input.
    """
    x = as_tensor(x)
    _check_3d(x)
    w = weight.data
    if w.ndim != 3:
        raise ShapeError(f"weight must be (in, out, k), got {w.shape}")
    n, c_in, length = x.shape
    w_in, c_out, k = w.shape
    if w_in != c_in:
        raise ShapeError(f"weight expects {w_in} input channels, input has {c_in}")
    if k != stride:
        raise ShapeError("only non-overlapping transposed convolution (kernel == stride) is supported")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias must be ({c_out},), got {bias.shape}")

    # wt[o*k + j, c] = w[c, o, j]
    wt = w.transpose(1, 2, 0).reshape(c_out * k, c_in)
    out = np.matmul(wt, x.data).reshape(n, c_out, k, length)
    out = np.ascontiguousarray(out.transpose(0, 1, 3, 2)).reshape(n, c_out, length * k)
    if bias is not None:
        out += bias.data[None, :, None]

    if not _needs_grad(x, weight, bias):
        return Tensor(out)

    def backward(g):
        g4 = np.ascontiguousarray(g.reshape(n, c_out, length, k).transpose(0, 1, 3, 2)).reshape(n, c_out * k, length)
        gx = np.matmul(wt.T, g4) if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gwt = np.einsum("bol,bcl->oc", g4, x.data, optimize=True)
            gw = gwt.reshape(c_out, k, c_in).transpose(2, 0, 1)
        gb = g.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor(out, True, parents, lambda g: backward(g)[: len(parents)])


def batchnorm1d(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization.

    In training mode statistics come from the batch and ``running_mean`` /
    ``running_var`` (numpy arrays) are updated in place; otherwise the
    running statistics are used and the op is an affine map.
    """
    x = as_tensor(x)
    _check_3d(x)
    n, c, length = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must be ({c},)")
    dt = x.data.dtype
    if training:
        count = n * length
        if count < 2:
            raise ValueError("batch norm in training mode needs more than one value per channel")
        mean = x.data.mean(axis=(0, 2), dtype=np.float64)
        centered = x.data - mean.astype(dt)[None, :, None]
        var = np.einsum("bcl,bcl->c", centered, centered, dtype=np.float64) / count
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * count / (count - 1)
    else:
        mean = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(dt)
    xhat = (x.data - mean.astype(dt)[None, :, None]) * inv_std[None, :, None]
    out = xhat * gamma.data[None, :, None] + beta.data[None, :, None]

    if not _needs_grad(x, gamma, beta):
        return Tensor(out)

    def backward(g):
        ggamma = np.einsum("bcl,bcl->c", g, xhat) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            scale = (gamma.data * inv_std)[None, :, None]
            if training:
                gsum = g.sum(axis=(0, 2))[None, :, None]
                gdot = np.einsum("bcl,bcl->c", g, xhat)[None, :, None]
                gx = scale * (g - gsum / count - xhat * gdot / count)
            else:
                gx = g * scale
        return gx, ggamma, gbeta

    return Tensor(out, True, (x, gamma, beta), backward)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    out = x.data * mask
    if not x.requires_grad:
        return Tensor(out)
    return Tensor(out, True, (x,), lambda g: (g * mask,))


def maxpool1d(x, factor=2):
    """Non-overlapping max pooling; ties go to the earliest index."""
    x = as_tensor(x)
    _check_3d(x)
    n, c, length = x.shape
    if length % factor:
        raise ShapeError(f"length {length} is not divisible by pooling factor {factor}")
    xr = x.data.reshape(n, c, length // factor, factor)
    idx = xr.argmax(axis=3)
    out = np.take_along_axis(xr, idx[..., None], axis=3)[..., 0]
    if not x.requires_grad:
        return Tensor(out)

    def backward(g):
        gx = np.zeros_like(xr)
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=3)
        return (gx.reshape(n, c, length),)

    return Tensor(out, True, (x,), backward)


def concat_channels(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_3d(a, "a")
    _check_3d(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape} along channels")
    out = np.concatenate([a.data, b.data], axis=1)
    if not _needs_grad(a, b):
        return Tensor(out)
    ca = a.shape[1]
    return Tensor(out, True, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


def l1_loss(pred, target):
    """Mean absolute error; the subgradient at zero residual is zero."""
    pred = as_tensor(pred)
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred.data.astype(np.float64) - target.data.astype(np.float64)
    value = np.abs(diff).mean()
    out = np.asarray(value, dtype=pred.data.dtype)
    if not _needs_grad(pred, target):
        return Tensor(out)
    sign = np.sign(diff).astype(pred.data.dtype) / diff.size

    def backward(g):
        gs = sign * g
        return (gs if pred.requires_grad else None, -gs if target.requires_grad else None)

    return Tensor(out, True, (pred, target), backward)


def weighted_sum(x, weights):
    """Scalar ``sum(x * weights)`` with constant ``weights`` (smooth probe loss)."""
    x = as_tensor(x)
    weights = np.asarray(weights, dtype=x.data.dtype)
    if weights.shape != x.shape:
        raise ShapeError(f"weights {weights.shape} do not match {x.shape}")
    out = np.asarray(np.sum(x.data.astype(np.float64) * weights), dtype=x.data.dtype)
    if not x.requires_grad:
        return Tensor(out)
    return Tensor(out, True, (x,), lambda g: (g * weights,))
