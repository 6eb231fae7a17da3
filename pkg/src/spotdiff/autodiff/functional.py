"""Spatial operations for small convolutional networks.

Convolution is direct im2col + GEMM. The fast path works on
channels-last (N, H, W, C) arrays, where patch gathering and scattering
move C-contiguous blocks; the public channels-first ops wrap it with
differentiable layout transposes so their (N, C, H, W) contracts hold
verbatim. Networks call the channels-last variants directly.

The column matrix is cached for the kernel gradient only when the kernel
actually requires one, so frozen backbones skip that memory and compute.
Broadcasting is deliberately restricted to bias adds and per-channel
affine shapes. Kernels are always (O, C, k, k).
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, DimensionError
from .tensor import Tensor, grad_enabled, make_op

# -- layout ---------------------------------------------------------------


def to_nhwc(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError("to_nhwc expects rank 4")
    return make_op(
        np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)),
        (x,),
        lambda g: (np.ascontiguousarray(g.transpose(0, 3, 1, 2)),),
    )


def to_nchw(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError("to_nchw expects rank 4")
    return make_op(
        np.ascontiguousarray(x.data.transpose(0, 3, 1, 2)),
        (x,),
        lambda g: (np.ascontiguousarray(g.transpose(0, 2, 3, 1)),),
    )


# -- convolution (channels-last core) --------------------------------------


def _im2col_nhwc(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(N, Hp, Wp, C) -> (N * Ho * Wo, k * k * C) patch-row matrix."""
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    # win: (N, Ho, Wo, C, k, k) -> rows ordered (ki, kj, c)
    n, ho, wo = win.shape[:3]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, -1)
    return np.ascontiguousarray(cols)


def conv2d_nhwc(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (N, H, W, C) input with an (O, C, k, k) kernel."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError("conv2d expects 4-D input and kernel")
    n, h, w, c = x.shape
    o, ck, kh, kw = kernel.shape
    if kh != kw:
        raise DimensionError("conv2d: only square kernels supported")
    k = kh
    if ck != c:
        raise DimensionError(f"conv2d: channel mismatch input {c} vs kernel {ck}")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise DimensionError(f"conv2d: kernel {k} larger than padded input {h + 2 * padding}")
    if stride < 1:
        raise ConfigError("conv2d: stride must be >= 1")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    cols = _im2col_nhwc(xp, k, stride)
    # kernel rows reordered to match the (ki, kj, c) column order
    kmat = np.ascontiguousarray(kernel.data.transpose(2, 3, 1, 0)).reshape(k * k * c, o)
    y = (cols @ kmat).reshape(n, ho, wo, o)

    keep_cols = grad_enabled() and kernel.requires_grad
    saved_cols = cols if keep_cols else None
    hp, wp = xp.shape[1], xp.shape[2]

    def backward(g):
        gmat = g.reshape(n * ho * wo, o)
        if kernel.requires_grad:
            gk = (saved_cols.T @ gmat).reshape(k, k, c, o).transpose(3, 2, 0, 1)
            gk = np.ascontiguousarray(gk)
        else:
            gk = None
        if x.requires_grad:
            dcol = (gmat @ kmat.T).reshape(n, ho, wo, k, k, c)
            dxp = np.zeros((n, hp, wp, c), dtype=g.dtype)
            for ki in range(k):
                he = ki + stride * ho
                for kj in range(k):
                    we = kj + stride * wo
                    dxp[:, ki:he:stride, kj:we:stride, :] += dcol[:, :, :, ki, kj, :]
            gx = dxp[:, padding : padding + h, padding : padding + w, :] if padding else dxp
        else:
            gx = None
        return (gx, gk)

    return make_op(y, (x, kernel), backward)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of (N, C, H, W) with (O, C, k, k)."""
    if x.data.ndim != 4:
        raise DimensionError("conv2d expects 4-D input")
    return to_nchw(conv2d_nhwc(to_nhwc(x), kernel, stride, padding))


# -- normalization and per-channel affine ----------------------------------


def group_norm_nhwc(x: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Per-group standardization of (N, H, W, C); no affine (see channel_affine)."""
    if x.data.ndim != 4:
        raise DimensionError("group_norm expects rank 4")
    n, h, w, c = x.shape
    if groups < 1 or c % groups != 0:
        raise ConfigError(f"group_norm: {groups} groups do not divide {c} channels")
    cg = c // groups
    xg = x.data.reshape(n, h * w, groups, cg)
    mean = xg.mean(axis=(1, 3), keepdims=True)
    var = xg.var(axis=(1, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    yg = (xg - mean) * inv
    y = yg.reshape(x.shape)

    def backward(g):
        gg = g.reshape(n, h * w, groups, cg)
        gmean = gg.mean(axis=(1, 3), keepdims=True)
        gymean = (gg * yg).mean(axis=(1, 3), keepdims=True)
        dx = inv * (gg - gmean - yg * gymean)
        return (dx.reshape(x.shape).astype(x.dtype, copy=False),)

    return make_op(y, (x,), backward)


def group_norm(x: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Per-group standardization of (N, C, H, W); no affine (see channel_affine)."""
    if x.data.ndim != 4:
        raise DimensionError("group_norm expects (N, C, H, W)")
    return to_nchw(group_norm_nhwc(to_nhwc(x), groups, eps))


def _affine_views(shape, n, c, gamma, beta, channel_axis):
    if gamma.shape != beta.shape:
        raise DimensionError(f"channel_affine: gamma {gamma.shape} vs beta {beta.shape}")
    if gamma.shape == (c,):
        if channel_axis == 1:
            return gamma.data[None, :, None, None], beta.data[None, :, None, None], (0, 2, 3)
        return gamma.data, beta.data, (0, 1, 2)
    if gamma.shape == (n, c):
        if channel_axis == 1:
            return gamma.data[:, :, None, None], beta.data[:, :, None, None], (2, 3)
        return gamma.data[:, None, None, :], beta.data[:, None, None, :], (1, 2)
    raise DimensionError(f"channel_affine: width mismatch {gamma.shape} on {n} x {c} channels")


def _channel_affine_impl(x: Tensor, gamma: Tensor, beta: Tensor, channel_axis: int) -> Tensor:
    n, c = x.shape[0], x.shape[channel_axis]
    gam, bet, reduce_axes = _affine_views(x.shape, n, c, gamma, beta, channel_axis)

    def backward(g):
        gx = g * gam if x.requires_grad else None
        ggam = (g * x.data).sum(axis=reduce_axes) if gamma.requires_grad else None
        gbet = g.sum(axis=reduce_axes) if beta.requires_grad else None
        return (gx, ggam, gbet)

    return make_op(x.data * gam + bet, (x, gamma, beta), backward)


def channel_affine(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Per-channel scale and shift on (N, C, H, W).

    gamma/beta may be shared across the batch (shape (C,)) or per-sample
    (shape (N, C)), covering both norm affines and FiLM modulation.
    """
    if x.data.ndim != 4:
        raise DimensionError("channel_affine expects (N, C, H, W)")
    return _channel_affine_impl(x, gamma, beta, channel_axis=1)


def channel_affine_nhwc(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError("channel_affine expects rank 4")
    return _channel_affine_impl(x, gamma, beta, channel_axis=3)


def add_channel_vec(x: Tensor, v: Tensor) -> Tensor:
    """(N, C, H, W) + per-sample channel vector (N, C)."""
    if x.data.ndim != 4 or v.shape != x.shape[:2]:
        raise DimensionError(f"add_channel_vec: {x.shape} + {v.shape}")

    def backward(g):
        gx = g if x.requires_grad else None
        gv = g.sum(axis=(2, 3)) if v.requires_grad else None
        return (gx, gv)

    return make_op(x.data + v.data[:, :, None, None], (x, v), backward)


def add_channel_vec_nhwc(x: Tensor, v: Tensor) -> Tensor:
    """(N, H, W, C) + per-sample channel vector (N, C)."""
    if x.data.ndim != 4 or v.shape != (x.shape[0], x.shape[3]):
        raise DimensionError(f"add_channel_vec: {x.shape} + {v.shape}")

    def backward(g):
        gx = g if x.requires_grad else None
        gv = g.sum(axis=(1, 2)) if v.requires_grad else None
        return (gx, gv)

    return make_op(x.data + v.data[:, None, None, :], (x, v), backward)


# -- resampling and pooling -------------------------------------------------


def upsample_nearest2x(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C, 2H, 2W) by pixel repetition."""
    if x.data.ndim != 4:
        raise DimensionError("upsample_nearest2x expects (N, C, H, W)")
    y = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        n, c, h2, w2 = g.shape
        gs = g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))
        return (gs,)

    return make_op(y, (x,), backward)


def upsample_nearest2x_nhwc(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError("upsample_nearest2x expects rank 4")
    y = x.data.repeat(2, axis=1).repeat(2, axis=2)

    def backward(g):
        n, h2, w2, c = g.shape
        gs = g.reshape(n, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4))
        return (gs,)

    return make_op(y, (x,), backward)


def global_mean_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    if x.data.ndim != 4:
        raise DimensionError("global_mean_pool expects (N, C, H, W)")
    m = x.shape[2] * x.shape[3]

    def backward(g):
        return ((np.broadcast_to(g[:, :, None, None], x.shape) / m).astype(x.dtype, copy=True),)

    return make_op(x.data.mean(axis=(2, 3)), (x,), backward)


def global_mean_pool_nhwc(x: Tensor) -> Tensor:
    """(N, H, W, C) -> (N, C) spatial mean."""
    if x.data.ndim != 4:
        raise DimensionError("global_mean_pool expects rank 4")
    m = x.shape[1] * x.shape[2]

    def backward(g):
        return ((np.broadcast_to(g[:, None, None, :], x.shape) / m).astype(x.dtype, copy=True),)

    return make_op(x.data.mean(axis=(1, 2)), (x,), backward)


# -- embeddings ---------------------------------------------------------------


def embed_timestep(t, dim: int, max_period: float = 10000.0, dtype=np.float32) -> Tensor:
    """Sinusoidal timestep embedding; (N,) ints -> (N, dim) constant tensor."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((t.shape[0], 1))], axis=1)
    return Tensor(emb.astype(dtype))
