"""Pure numpy implementations of the convolution and pooling kernels.

All kernels work on channels-last (NHWC) arrays. Padding is given per edge as
``(top, bottom, left, right)``.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided


def out_size(n, k, s, p0, p1):
    return (n + p0 + p1 - k) // s + 1


def _windows(xp, kh, kw, sh, sw, ho, wo):
    n, _, _, c = xp.shape
    s0, s1, s2, s3 = xp.strides
    return as_strided(
        xp,
        shape=(n, ho, wo, kh, kw, c),
        strides=(s0, s1 * sh, s2 * sw, s1, s2, s3),
        writeable=False,
    )


def im2col(x, kh, kw, sh, sw, pad):
    """Gather sliding windows into a ``(N, Ho, Wo, kh, kw, C)`` array."""
    pt, pb, pl, pr = pad
    n, h, w, c = x.shape
    ho = out_size(h, kh, sh, pt, pb)
    wo = out_size(w, kw, sw, pl, pr)
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    return np.ascontiguousarray(_windows(x, kh, kw, sh, sw, ho, wo))


def col2im(cols, in_shape, sh, sw, pad):
    """Scatter-add the adjoint of :func:`im2col` back onto the input grid."""
    pt, pb, pl, pr = pad
    n, h, w, c = in_shape
    _, ho, wo, kh, kw, _ = cols.shape
    out = np.zeros((n, h + pt + pb, w + pl + pr, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw, :] += cols[:, :, :, i, j, :]
    return out[:, pt:pt + h, pl:pl + w, :]


def maxpool_forward(x, kh, kw, sh, sw, pad):
    """Max over windows; padded cells never win. Returns (out, flat argmax)."""
    pt, pb, pl, pr = pad
    n, h, w, c = x.shape
    ho = out_size(h, kh, sh, pt, pb)
    wo = out_size(w, kw, sw, pl, pr)
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=-np.inf)
    win = _windows(x, kh, kw, sh, sw, ho, wo).reshape(n, ho, wo, kh * kw, c)
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    # window offset -> absolute (row, col) in the unpadded input
    oi = arg // kw
    oj = arg % kw
    rows = np.arange(ho)[None, :, None, None] * sh + oi - pt
    cols = np.arange(wo)[None, None, :, None] * sw + oj - pl
    return np.ascontiguousarray(out), (rows * w + cols).astype(np.int64)


def maxpool_backward(dout, index, in_shape):
    n, h, w, c = in_shape
    dx = np.zeros((n, h * w, c), dtype=dout.dtype)
    ni = np.broadcast_to(np.arange(n)[:, None, None, None], index.shape)
    ci = np.broadcast_to(np.arange(c)[None, None, None, :], index.shape)
    np.add.at(dx, (ni, index, ci), dout)
    return dx.reshape(n, h, w, c)
