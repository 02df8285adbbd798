"""Forward and backward passes for the layer types of the crack network.

Feature maps are channels-last. Every function accepts a single map
(H, W, C) or a batch (N, H, W, C); outputs follow the input's rank.
Backward functions *accumulate* into ``params.grad_*``.
"""

from dataclasses import dataclass

import numpy as np

from .. import kernels
from .params import LayerParams


@dataclass
class ConvCache:
    xpad: np.ndarray  # zero-padded input, (N, H+2p, W+2p, C_in)
    in_shape: tuple
    out_hw: tuple
    stride: int
    pad: int
    batched: bool


@dataclass
class PoolCache:
    argmax: np.ndarray
    in_shape: tuple
    window: int
    stride: int
    batched: bool


@dataclass
class FCCache:
    x: np.ndarray
    batched: bool


def _as_batch(x, rank):
    if x.ndim == rank:
        return x, True
    if x.ndim == rank - 1:
        return x[None], False
    raise ValueError(f"expected rank {rank - 1} or {rank} input, got shape {x.shape}")


# Samples per im2col chunk; keeps the column buffer cache-resident.
CHUNK = 8


def conv2d_forward(x, params: LayerParams, stride=1, pad=1):
    xb, batched = _as_batch(np.asarray(x), 4)
    kh, kw, cin, cout = params.weights.shape
    n, h, w, c = xb.shape
    if c != cin:
        raise ValueError(f"input has {c} channels, kernel expects {cin}")
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ValueError(f"input {h}x{w} too small for a {kh}x{kw} kernel with pad {pad}")
    xpad = np.pad(xb, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else np.ascontiguousarray(xb)
    w2 = params.weights.reshape(kh * kw * cin, cout)
    out = np.empty((n, out_h, out_w, cout), dtype=np.result_type(xpad.dtype, w2.dtype))
    for i in range(0, n, CHUNK):
        col = kernels.im2col(xpad[i:i + CHUNK], kh, kw, stride, out_h, out_w)
        out[i:i + CHUNK] = (col.reshape(-1, kh * kw * cin) @ w2).reshape(-1, out_h, out_w, cout)
    out += params.biases
    cache = ConvCache(xpad, xb.shape, (out_h, out_w), stride, pad, batched)
    return (out if batched else out[0]), cache


def conv2d_backward(grad_out, cache: ConvCache, params: LayerParams, need_input_grad=True):
    if cache is None:
        raise RuntimeError("conv2d_backward called before conv2d_forward")
    g, _ = _as_batch(np.asarray(grad_out), 4)
    kh, kw, cin, cout = params.weights.shape
    n = cache.xpad.shape[0]
    out_h, out_w = cache.out_hw
    if g.shape != (n, out_h, out_w, cout):
        raise ValueError(f"grad_out shape {g.shape} does not match forward output {(n, out_h, out_w, cout)}")
    _, h, w, _ = cache.in_shape
    p, stride = cache.pad, cache.stride
    k = kh * kw * cin
    w2 = params.weights.reshape(k, cout)
    # stride 1: the input gradient is a full correlation of grad_out with the flipped kernel
    flipped = stride == 1 and p <= kh - 1 and p <= kw - 1
    if need_input_grad and flipped:
        qh, qw = kh - 1 - p, kw - 1 - p
        gpad = np.pad(g, ((0, 0), (qh, qh), (qw, qw), (0, 0)))
        w_flip = params.weights[::-1, ::-1].transpose(0, 1, 3, 2).reshape(kh * kw * cout, cin)
        dx = np.empty((n, h, w, cin), dtype=g.dtype)
    elif need_input_grad:
        dxpad = np.zeros((n, h + 2 * p, w + 2 * p, cin), dtype=g.dtype)
    gw = np.zeros_like(params.grad_weights).reshape(k, cout)
    for i in range(0, n, CHUNK):
        col = kernels.im2col(cache.xpad[i:i + CHUNK], kh, kw, stride, out_h, out_w).reshape(-1, k)
        gc = g[i:i + CHUNK].reshape(-1, cout)
        gw += col.T @ gc
        if not need_input_grad:
            continue
        if flipped:
            gcol = kernels.im2col(gpad[i:i + CHUNK], kh, kw, 1, h, w).reshape(-1, kh * kw * cout)
            dx[i:i + CHUNK] = (gcol @ w_flip).reshape(-1, h, w, cin)
        else:
            dcol = (gc @ w2.T).reshape(-1, out_h, out_w, kh, kw, cin)
            dxpad[i:i + CHUNK] = kernels.col2im(dcol, (len(dcol), h + 2 * p, w + 2 * p, cin), stride)
    params.grad_weights += gw.reshape(params.weights.shape)
    params.grad_biases += g.reshape(-1, cout).sum(axis=0)
    params.grads_fresh = True
    if not need_input_grad:
        return None
    if not flipped:
        dx = dxpad[:, p:p + h, p:p + w, :] if p else dxpad
    return dx if cache.batched else dx[0]


def maxpool_forward(x, window=2, stride=2):
    xb, batched = _as_batch(np.asarray(x), 4)
    if xb.shape[1] < window or xb.shape[2] < window:
        raise ValueError(f"spatial size {xb.shape[1:3]} smaller than pooling window {window}")
    out, argmax = kernels.maxpool_forward(np.ascontiguousarray(xb), window, stride)
    cache = PoolCache(argmax, xb.shape, window, stride, batched)
    return (out if batched else out[0]), cache


def maxpool_backward(grad_out, cache: PoolCache):
    if cache is None:
        raise RuntimeError("maxpool_backward called before maxpool_forward")
    g, _ = _as_batch(np.asarray(grad_out), 4)
    if g.shape != cache.argmax.shape:
        raise ValueError(f"grad_out shape {g.shape} does not match pooling indices {cache.argmax.shape}")
    dx = kernels.maxpool_backward(g, cache.argmax, cache.in_shape, cache.window, cache.stride)
    return dx if cache.batched else dx[0]


def fc_forward(x, params: LayerParams):
    xb, batched = _as_batch(np.asarray(x), 2)
    if xb.shape[1] != params.weights.shape[1]:
        raise ValueError(f"input has {xb.shape[1]} features, layer expects {params.weights.shape[1]}")
    out = xb @ params.weights.T
    out += params.biases
    return (out if batched else out[0]), FCCache(xb, batched)


def fc_backward(grad_out, cache: FCCache, params: LayerParams):
    if cache is None:
        raise RuntimeError("fc_backward called before fc_forward")
    g, _ = _as_batch(np.asarray(grad_out), 2)
    if g.shape != (cache.x.shape[0], params.weights.shape[0]):
        raise ValueError(f"grad_out shape {g.shape} does not match layer output")
    params.grad_weights += g.T @ cache.x
    params.grad_biases += g.sum(axis=0)
    params.grads_fresh = True
    dx = g @ params.weights
    return dx if cache.batched else dx[0]


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    """Subgradient at 0 is taken as 0."""
    return grad_out * (x > 0)


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x.dtype, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def dropout(x, p, rng, training=True):
    """Inverted dropout. Returns (output, mask); mask already carries the 1/(1-p) scale."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    x = np.asarray(x)
    if not training or p == 0.0:
        return x, np.ones_like(x)
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - p)
    return x * mask, mask


def dropout_backward(grad_out, mask):
    return grad_out * mask
