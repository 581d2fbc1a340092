"""Forward and backward passes of the individual network layers.

Activations are laid out as (batch, channels, time). Functions also accept a
single (channels, time) matrix.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1


def _as_batch(x):
    x = np.asarray(x)
    return (x[None], True) if x.ndim == 2 else (x, False)


def out_length(n_frames, stride):
    return -(-n_frames // stride)


def _windows(x, kernel, stride, dilation):
    """Strided view cols[n, c, t, k] = x_padded[n, c, t * stride + k * dilation]."""
    if kernel % 2 == 0:
        raise ValueError(f"kernel width must be odd, got {kernel}")
    pad = (kernel - 1) // 2 * dilation
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    n, c, _ = xp.shape
    t_out = out_length(x.shape[2], stride)
    s0, s1, s2 = xp.strides
    cols = as_strided(
        xp, (n, c, t_out, kernel), (s0, s1, s2 * stride, s2 * dilation), writeable=False
    )
    return cols, pad


def _scatter_windows(dcols, n_frames, pad, stride, dilation):
    """Adjoint of :func:`_windows`: accumulate window gradients onto the input."""
    n, c, t_out, kernel = dcols.shape
    dxp = np.zeros((n, c, n_frames + 2 * pad), dtype=dcols.dtype)
    span = (t_out - 1) * stride + 1
    for k in range(kernel):
        lo = k * dilation
        dxp[:, :, lo: lo + span: stride] += dcols[:, :, :, k]
    return dxp[:, :, pad: pad + n_frames]


def conv1d_forward(x, weight, bias=None, stride=1, dilation=1, return_cache=False):
    """'Same'-padded 1-D convolution; output length is ceil(T / stride)."""
    xb, single = _as_batch(x)
    if xb.shape[1] != weight.shape[1]:
        raise ValueError(
            f"input has {xb.shape[1]} channels but weight expects {weight.shape[1]}"
        )
    cols, pad = _windows(xb, weight.shape[2], stride, dilation)
    y = np.tensordot(cols, weight, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    y = np.ascontiguousarray(y)
    if bias is not None:
        y += bias[None, :, None]
    out = y[0] if single else y
    if return_cache:
        return out, (cols, pad, xb.shape[2], weight, stride, dilation, bias is not None, single)
    return out


def conv1d_backward(dy, cache):
    """Returns (dx, dweight, dbias); dbias is None for bias-free layers."""
    cols, pad, n_frames, weight, stride, dilation, has_bias, single = cache
    dy = dy[None] if single else dy
    dweight = np.tensordot(dy, cols, axes=([0, 2], [0, 2]))
    dcols = np.tensordot(dy, weight, axes=([1], [0])).transpose(0, 2, 1, 3)
    dx = _scatter_windows(dcols, n_frames, pad, stride, dilation)
    dbias = dy.sum(axis=(0, 2)) if has_bias else None
    return (dx[0] if single else dx), dweight, dbias


def depthwise_conv1d_forward(x, weight, stride=1, dilation=1, return_cache=False):
    """Per-channel convolution; ``weight`` has shape (channels, 1, kernel)."""
    xb, single = _as_batch(x)
    if weight.shape[0] != xb.shape[1] or weight.shape[1] != 1:
        raise ValueError(
            f"depthwise weight {weight.shape} does not match {xb.shape[1]} input channels"
        )
    cols, pad = _windows(xb, weight.shape[2], stride, dilation)
    y = np.einsum("nctk,ck->nct", cols, weight[:, 0, :])
    out = y[0] if single else y
    if return_cache:
        return out, (cols, pad, xb.shape[2], weight, stride, dilation, single)
    return out


def depthwise_conv1d_backward(dy, cache):
    cols, pad, n_frames, weight, stride, dilation, single = cache
    dy = dy[None] if single else dy
    dweight = np.einsum("nct,nctk->ck", dy, cols)[:, None, :]
    dcols = dy[..., None] * weight[None, :, 0, None, :]
    dx = _scatter_windows(dcols, n_frames, pad, stride, dilation)
    return (dx[0] if single else dx), dweight


def separable_conv1d_forward(
    x, depthwise_weight, pointwise_weight, bias=None, stride=1, dilation=1, return_cache=False
):
    """Depthwise convolution over time followed by a width-1 channel mix."""
    h, dcache = depthwise_conv1d_forward(x, depthwise_weight, stride, dilation, return_cache=True)
    y, pcache = conv1d_forward(h, pointwise_weight, bias, return_cache=True)
    return (y, (dcache, pcache)) if return_cache else y


def separable_conv1d_backward(dy, cache):
    """Returns (dx, d_depthwise, d_pointwise, dbias)."""
    dcache, pcache = cache
    dh, dpw, db = conv1d_backward(dy, pcache)
    dx, ddw = depthwise_conv1d_backward(dh, dcache)
    return dx, ddw, dpw, db


def batchnorm_forward(
    x,
    gain,
    shift,
    running_mean=None,
    running_var=None,
    mode="train",
    momentum=BN_MOMENTUM,
    eps=BN_EPSILON,
    mask=None,
):
    """Per-channel batch normalization over (batch, time).

    ``mask`` (batch, 1, time) restricts the statistics to valid frames.
    In train mode the running statistics are updated in place (population
    variance) when provided. Returns ``(y, cache)``.
    """
    xb, single = _as_batch(x)
    if mode == "train":
        if mask is None:
            count = xb.shape[0] * xb.shape[2]
            mean = xb.mean(axis=(0, 2))
            var = xb.var(axis=(0, 2))
        else:
            count = float(mask.sum())
            mean = (xb * mask).sum(axis=(0, 2)) / count
            var = (((xb - mean[:, None]) ** 2) * mask).sum(axis=(0, 2)) / count
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
        if running_var is not None:
            running_var *= 1.0 - momentum
            running_var += momentum * var
    elif mode == "eval":
        if running_mean is None or running_var is None:
            raise ValueError("batch norm in eval mode needs running statistics")
        mean, var, count = running_mean, running_var, None
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xb - mean[:, None]) * inv_std[:, None]
    y = gain[:, None] * xhat + shift[:, None]
    cache = (xhat, inv_std, gain, count, mask, mode == "train", single)
    return (y[0] if single else y), cache


def batchnorm_backward(dy, cache):
    """Returns (dx, dgain, dshift)."""
    xhat, inv_std, gain, count, mask, train, single = cache
    dy = dy[None] if single else dy
    if mask is not None:
        dy = dy * mask
    dgain = (dy * xhat).sum(axis=(0, 2))
    dshift = dy.sum(axis=(0, 2))
    dxhat = dy * gain[:, None]
    if train:
        sum_d = dxhat.sum(axis=(0, 2))[:, None]
        sum_dx = (dxhat * xhat).sum(axis=(0, 2))[:, None]
        dx = (inv_std[:, None] / count) * (count * dxhat - sum_d - xhat * sum_dx)
        if mask is not None:
            dx *= mask
    else:
        dx = dxhat * inv_std[:, None]
    return (dx[0] if single else dx), dgain, dshift


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, x):
    return dy * (x > 0)


def dropout_forward(x, rate, rng=None, mode="train"):
    """Inverted dropout. Returns ``(y, keep_mask)``; the mask is None when inactive."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode != "train" or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(np.shape(x)) >= rate) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dy, keep):
    return dy if keep is None else dy * keep
