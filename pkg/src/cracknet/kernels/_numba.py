"""numba-compiled kernels. Same contracts as ``_numpy``."""

import numba as nb
import numpy as np

_opts = dict(cache=True, nogil=True)


@nb.njit(**_opts)
def im2col(xpad, kh, kw, stride, out_h, out_w):
    n, _, _, c = xpad.shape
    col = np.empty((n, out_h, out_w, kh, kw, c), dtype=xpad.dtype)
    for b in range(n):
        for y in range(out_h):
            for x in range(out_w):
                y0 = y * stride
                x0 = x * stride
                for i in range(kh):
                    for j in range(kw):
                        for ch in range(c):
                            col[b, y, x, i, j, ch] = xpad[b, y0 + i, x0 + j, ch]
    return col


@nb.njit(**_opts)
def _col2im(dcol, dxpad, stride):
    n, out_h, out_w, kh, kw, c = dcol.shape
    for b in range(n):
        for y in range(out_h):
            for x in range(out_w):
                y0 = y * stride
                x0 = x * stride
                for i in range(kh):
                    for j in range(kw):
                        for ch in range(c):
                            dxpad[b, y0 + i, x0 + j, ch] += dcol[b, y, x, i, j, ch]


def col2im(dcol, padded_shape, stride):
    dxpad = np.zeros(padded_shape, dtype=dcol.dtype)
    _col2im(np.ascontiguousarray(dcol), dxpad, stride)
    return dxpad


@nb.njit(**_opts)
def maxpool_forward(x, window, stride):
    n, h, w, c = x.shape
    out_h = (h - window) // stride + 1
    out_w = (w - window) // stride + 1
    out = np.empty((n, out_h, out_w, c), dtype=x.dtype)
    argmax = np.empty((n, out_h, out_w, c), dtype=np.int64)
    for b in range(n):
        for y in range(out_h):
            for xx in range(out_w):
                for ch in range(c):
                    best = x[b, y * stride, xx * stride, ch]
                    best_k = 0
                    for i in range(window):
                        for j in range(window):
                            v = x[b, y * stride + i, xx * stride + j, ch]
                            # strict > keeps the first row-major maximum
                            if v > best:
                                best = v
                                best_k = i * window + j
                    out[b, y, xx, ch] = best
                    argmax[b, y, xx, ch] = best_k
    return out, argmax


@nb.njit(**_opts)
def _maxpool_backward(dout, argmax, dx, window, stride):
    n, out_h, out_w, c = dout.shape
    for b in range(n):
        for y in range(out_h):
            for xx in range(out_w):
                for ch in range(c):
                    k = argmax[b, y, xx, ch]
                    dx[b, y * stride + k // window, xx * stride + k % window, ch] += dout[b, y, xx, ch]


def maxpool_backward(dout, argmax, in_shape, window, stride):
    dx = np.zeros(in_shape, dtype=dout.dtype)
    _maxpool_backward(np.ascontiguousarray(dout), np.ascontiguousarray(argmax), dx, window, stride)
    return dx


@nb.njit(**_opts)
def _accumulate_votes(vote_sum, vote_count, windows, ys, xs):
    h, w = vote_sum.shape
    s = windows.shape[1]
    r = s // 2
    for k in range(windows.shape[0]):
        for i in range(s):
            ty = ys[k] + i - r
            if ty < 0 or ty >= h:
                continue
            for j in range(s):
                tx = xs[k] + j - r
                if tx < 0 or tx >= w:
                    continue
                vote_sum[ty, tx] += windows[k, i, j]
                vote_count[ty, tx] += 1


def accumulate_votes(vote_sum, vote_count, windows, ys, xs):
    _accumulate_votes(vote_sum, vote_count, np.ascontiguousarray(windows),
                      np.ascontiguousarray(ys, dtype=np.int64), np.ascontiguousarray(xs, dtype=np.int64))
