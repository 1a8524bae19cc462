"""Pure-numpy reference kernels (im2col via sliding windows + BLAS)."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x, p):
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d_forward(x, w, b):
    k = w.shape[2]
    win = sliding_window_view(_pad(x, k // 2), (k, k), axis=(2, 3))
    # win: (N, C, H, W, k, k) -> (N, H, W, F)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + b[None, :, None, None]
    return np.ascontiguousarray(out, dtype=x.dtype)


def conv2d_backward(x, w, dy):
    k = w.shape[2]
    p = k // 2
    win = sliding_window_view(_pad(x, p), (k, k), axis=(2, 3))
    dw = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))  # (F, C, k, k)
    db = dy.sum(axis=(0, 2, 3))
    # dx is the "same" correlation of dy with the spatially flipped, channel-swapped kernel
    w_flip = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    dwin = sliding_window_view(_pad(dy, p), (k, k), axis=(2, 3))
    dx = np.tensordot(dwin, w_flip, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    return (np.ascontiguousarray(dx, dtype=x.dtype),
            dw.astype(w.dtype, copy=False), db.astype(w.dtype, copy=False))


def maxpool2x2_forward(x):
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    # argmax picks the first maximum, matching the numba kernel's tie-break
    idx = blocks.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(blocks, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2x2_backward(dy, idx):
    n, c, h2, w2 = dy.shape
    onehot = np.zeros((n, c, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(onehot, idx[..., None].astype(np.intp), dy[..., None], axis=-1)
    dx = onehot.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx.reshape(n, c, h2 * 2, w2 * 2))


def upsample2x2_forward(x):
    return np.ascontiguousarray(x.repeat(2, axis=2).repeat(2, axis=3))


def upsample2x2_backward(dy):
    n, c, h, w = dy.shape
    return np.ascontiguousarray(dy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)))
