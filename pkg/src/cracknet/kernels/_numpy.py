"""Pure-numpy kernels. Reference path and fallback when numba is unavailable.

All spatial arrays are channels-last: (N, H, W, C).
"""

import numpy as np


def im2col(xpad, kh, kw, stride, out_h, out_w):
    """Gather sliding windows into a (N, out_h, out_w, kh, kw, C) array."""
    n, _, _, c = xpad.shape
    col = np.empty((n, out_h, out_w, kh, kw, c), dtype=xpad.dtype)
    h_stop = stride * (out_h - 1) + 1
    w_stop = stride * (out_w - 1) + 1
    for i in range(kh):
        for j in range(kw):
            col[:, :, :, i, j, :] = xpad[:, i:i + h_stop:stride, j:j + w_stop:stride, :]
    return col


def col2im(dcol, padded_shape, stride):
    """Adjoint of :func:`im2col`: scatter-add window gradients back."""
    _, out_h, out_w, kh, kw, _ = dcol.shape
    dxpad = np.zeros(padded_shape, dtype=dcol.dtype)
    h_stop = stride * (out_h - 1) + 1
    w_stop = stride * (out_w - 1) + 1
    for i in range(kh):
        for j in range(kw):
            dxpad[:, i:i + h_stop:stride, j:j + w_stop:stride, :] += dcol[:, :, :, i, j, :]
    return dxpad


def maxpool_forward(x, window, stride):
    n, h, w, c = x.shape
    out_h = (h - window) // stride + 1
    out_w = (w - window) // stride + 1
    h_stop = stride * (out_h - 1) + 1
    w_stop = stride * (out_w - 1) + 1
    # (N, oh, ow, C, window*window) with row-major window order
    cand = np.empty((n, out_h, out_w, c, window * window), dtype=x.dtype)
    for i in range(window):
        for j in range(window):
            cand[..., i * window + j] = x[:, i:i + h_stop:stride, j:j + w_stop:stride, :]
    argmax = cand.argmax(axis=-1)  # first occurrence wins ties
    out = np.take_along_axis(cand, argmax[..., None], axis=-1)[..., 0]
    return out, argmax.astype(np.int64)


def maxpool_backward(dout, argmax, in_shape, window, stride):
    _, out_h, out_w, _ = dout.shape
    dx = np.zeros(in_shape, dtype=dout.dtype)
    h_stop = stride * (out_h - 1) + 1
    w_stop = stride * (out_w - 1) + 1
    for i in range(window):
        for j in range(window):
            hit = argmax == i * window + j
            dx[:, i:i + h_stop:stride, j:j + w_stop:stride, :] += np.where(hit, dout, 0)
    return dx


def accumulate_votes(vote_sum, vote_count, windows, ys, xs):
    """Add each s x s prediction window into the maps, centred on (ys[k], xs[k]).

    Window cells falling outside the maps are dropped.
    """
    h, w = vote_sum.shape
    s = windows.shape[1]
    r = s // 2
    for i in range(s):
        for j in range(s):
            ty = ys + i - r
            tx = xs + j - r
            ok = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
            np.add.at(vote_sum, (ty[ok], tx[ok]), windows[ok, i, j])
            np.add.at(vote_count, (ty[ok], tx[ok]), 1)
