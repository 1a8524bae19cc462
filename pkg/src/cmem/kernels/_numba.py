"""Numba-compiled loop kernels.

Convolutions with several filters go through an im2col buffer and one BLAS
matrix product per sample; narrow ones (fewer than ``GEMM_MIN_FILTERS``
outputs) use direct loops, which win when the product would be a thin outer
product. Loop order keeps the innermost index on the contiguous width axis.
Everything runs serially so float reductions happen in a fixed order.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _pad_into(buf, x, n, p):
    c_, h_, w_ = x.shape[1], x.shape[2], x.shape[3]
    for c in range(c_):
        for i in range(h_):
            for j in range(w_):
                buf[c, i + p, j + p] = x[n, c, i, j]


GEMM_MIN_FILTERS = 4


@njit(cache=True)
def _im2col(xp, cols, k, h_, w_):
    r = 0
    for c in range(xp.shape[0]):
        for ki in range(k):
            for kj in range(k):
                for i in range(h_):
                    src = xp[c, i + ki]
                    base = i * w_
                    for j in range(w_):
                        cols[r, base + j] = src[j + kj]
                r += 1


@njit(cache=True)
def _col2im_add(dcols, dxp, k, h_, w_):
    r = 0
    for c in range(dxp.shape[0]):
        for ki in range(k):
            for kj in range(k):
                for i in range(h_):
                    dst = dxp[c, i + ki]
                    base = i * w_
                    for j in range(w_):
                        dst[j + kj] += dcols[r, base + j]
                r += 1


@njit(cache=True)
def _conv2d_forward_gemm(x, w, b):
    n_, c_, h_, w_ = x.shape
    f_ = w.shape[0]
    k = w.shape[2]
    p = k // 2
    xp = np.zeros((c_, h_ + 2 * p, w_ + 2 * p), dtype=x.dtype)
    cols = np.empty((c_ * k * k, h_ * w_), dtype=x.dtype)
    w2 = np.ascontiguousarray(w).reshape(f_, c_ * k * k)
    out = np.empty((n_, f_, h_ * w_), dtype=x.dtype)
    for n in range(n_):
        _pad_into(xp, x, n, p)
        _im2col(xp, cols, k, h_, w_)
        o = np.dot(w2, cols)
        for f in range(f_):
            bf = b[f]
            for j in range(h_ * w_):
                out[n, f, j] = o[f, j] + bf
    return out.reshape(n_, f_, h_, w_)


@njit(cache=True)
def _conv2d_backward_gemm(x, w, dy):
    n_, c_, h_, w_ = x.shape
    f_ = w.shape[0]
    k = w.shape[2]
    p = k // 2
    kk = c_ * k * k
    xp = np.zeros((c_, h_ + 2 * p, w_ + 2 * p), dtype=x.dtype)
    dxp = np.zeros((c_, h_ + 2 * p, w_ + 2 * p), dtype=x.dtype)
    cols = np.empty((kk, h_ * w_), dtype=x.dtype)
    w2t = np.ascontiguousarray(np.ascontiguousarray(w).reshape(f_, kk).T)
    dw = np.zeros((f_, kk), dtype=w.dtype)
    db = np.zeros(f_, dtype=w.dtype)
    dx = np.empty_like(x)
    for n in range(n_):
        _pad_into(xp, x, n, p)
        _im2col(xp, cols, k, h_, w_)
        g = np.ascontiguousarray(dy[n]).reshape(f_, h_ * w_)
        dw += np.dot(g, cols.T)
        for f in range(f_):
            db[f] += g[f].sum()
        dxp[:] = 0
        _col2im_add(np.dot(w2t, g), dxp, k, h_, w_)
        for c in range(c_):
            for i in range(h_):
                for j in range(w_):
                    dx[n, c, i, j] = dxp[c, i + p, j + p]
    return dx, dw.reshape(w.shape), db


@njit(cache=True)
def conv2d_forward(x, w, b):
    if w.shape[0] >= GEMM_MIN_FILTERS:
        return _conv2d_forward_gemm(x, w, b)
    return _conv2d_forward_direct(x, w, b)


@njit(cache=True)
def conv2d_backward(x, w, dy):
    if w.shape[0] >= GEMM_MIN_FILTERS:
        return _conv2d_backward_gemm(x, w, dy)
    return _conv2d_backward_direct(x, w, dy)


@njit(cache=True)
def _conv2d_forward_direct(x, w, b):
    n_, c_, h_, w_ = x.shape
    f_ = w.shape[0]
    k = w.shape[2]
    p = k // 2
    xp = np.zeros((c_, h_ + 2 * p, w_ + 2 * p), dtype=x.dtype)
    out = np.empty((n_, f_, h_, w_), dtype=x.dtype)
    for n in range(n_):
        _pad_into(xp, x, n, p)
        for f in range(f_):
            o = out[n, f]
            o[:, :] = b[f]
            for c in range(c_):
                xc = xp[c]
                for ki in range(k):
                    for kj in range(k):
                        wv = w[f, c, ki, kj]
                        for i in range(h_):
                            row = xc[i + ki]
                            orow = o[i]
                            for j in range(w_):
                                orow[j] += wv * row[j + kj]
    return out


@njit(cache=True)
def _conv2d_backward_direct(x, w, dy):
    n_, c_, h_, w_ = x.shape
    f_ = w.shape[0]
    k = w.shape[2]
    p = k // 2
    xp = np.zeros((c_, h_ + 2 * p, w_ + 2 * p), dtype=x.dtype)
    dxp = np.zeros((c_, h_ + 2 * p, w_ + 2 * p), dtype=x.dtype)
    acc = np.empty(w_, dtype=x.dtype)
    dx = np.empty_like(x)
    dw = np.zeros_like(w)
    db = np.zeros(f_, dtype=w.dtype)
    for n in range(n_):
        _pad_into(xp, x, n, p)
        dxp[:] = 0
        for f in range(f_):
            g = dy[n, f]
            s = 0.0
            for i in range(h_):
                for j in range(w_):
                    s += g[i, j]
            db[f] += s
            for c in range(c_):
                xc = xp[c]
                dc = dxp[c]
                for ki in range(k):
                    for kj in range(k):
                        wv = w[f, c, ki, kj]
                        acc[:] = 0
                        for i in range(h_):
                            row = xc[i + ki]
                            drow = dc[i + ki]
                            grow = g[i]
                            for j in range(w_):
                                acc[j] += grow[j] * row[j + kj]
                                drow[j + kj] += wv * grow[j]
                        dw[f, c, ki, kj] += acc.sum()
        for c in range(c_):
            for i in range(h_):
                for j in range(w_):
                    dx[n, c, i, j] = dxp[c, i + p, j + p]
    return dx, dw, db


@njit(cache=True)
def maxpool2x2_forward(x):
    n_, c_, h_, w_ = x.shape
    h2 = h_ // 2
    w2 = w_ // 2
    out = np.empty((n_, c_, h2, w2), dtype=x.dtype)
    idx = np.empty((n_, c_, h2, w2), dtype=np.int8)
    for n in range(n_):
        for c in range(c_):
            for i in range(h2):
                for j in range(w2):
                    best = x[n, c, 2 * i, 2 * j]
                    arg = 0
                    for q in range(1, 4):
                        v = x[n, c, 2 * i + q // 2, 2 * j + q % 2]
                        if v > best:
                            best = v
                            arg = q
                    out[n, c, i, j] = best
                    idx[n, c, i, j] = arg
    return out, idx


@njit(cache=True)
def maxpool2x2_backward(dy, idx):
    n_, c_, h2, w2 = dy.shape
    dx = np.zeros((n_, c_, 2 * h2, 2 * w2), dtype=dy.dtype)
    for n in range(n_):
        for c in range(c_):
            for i in range(h2):
                for j in range(w2):
                    q = idx[n, c, i, j]
                    dx[n, c, 2 * i + q // 2, 2 * j + q % 2] = dy[n, c, i, j]
    return dx


@njit(cache=True)
def upsample2x2_forward(x):
    n_, c_, h_, w_ = x.shape
    out = np.empty((n_, c_, 2 * h_, 2 * w_), dtype=x.dtype)
    for n in range(n_):
        for c in range(c_):
            for i in range(2 * h_):
                for j in range(2 * w_):
                    out[n, c, i, j] = x[n, c, i // 2, j // 2]
    return out


@njit(cache=True)
def upsample2x2_backward(dy):
    n_, c_, h_, w_ = dy.shape
    dx = np.zeros((n_, c_, h_ // 2, w_ // 2), dtype=dy.dtype)
    for n in range(n_):
        for c in range(c_):
            for i in range(h_):
                for j in range(w_):
                    dx[n, c, i // 2, j // 2] += dy[n, c, i, j]
    return dx
