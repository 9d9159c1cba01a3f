# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled NHWC convolution/pooling kernels.

Same contracts as ``_kernels_py``; selected at import when the extension built.
"""
import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _out(Py_ssize_t n, Py_ssize_t k, Py_ssize_t s,
                            Py_ssize_t p0, Py_ssize_t p1) nogil:
    return (n + p0 + p1 - k) // s + 1


def out_size(n, k, s, p0, p1):
    return (n + p0 + p1 - k) // s + 1


def _im2col(real[:, :, :, ::1] x, real[:, :, :, :, :, ::1] cols,
            Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t pt, Py_ssize_t pl):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ho = cols.shape[1], wo = cols.shape[2]
    cdef Py_ssize_t kh = cols.shape[3], kw = cols.shape[4]
    cdef Py_ssize_t b, oi, oj, i, j, r, q, ch
    with nogil:
        for b in range(n):
            for oi in range(ho):
                for i in range(kh):
                    r = oi * sh + i - pt
                    for oj in range(wo):
                        for j in range(kw):
                            q = oj * sw + j - pl
                            if r < 0 or r >= h or q < 0 or q >= w:
                                for ch in range(c):
                                    cols[b, oi, oj, i, j, ch] = 0
                            else:
                                for ch in range(c):
                                    cols[b, oi, oj, i, j, ch] = x[b, r, q, ch]


def im2col(x, kh, kw, sh, sw, pad):
    pt, pb, pl, pr = pad
    x = np.ascontiguousarray(x)
    n, h, w, c = x.shape
    ho = out_size(h, kh, sh, pt, pb)
    wo = out_size(w, kw, sw, pl, pr)
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=x.dtype)
    _im2col(x, cols, sh, sw, pt, pl)
    return cols


def _col2im(real[:, :, :, :, :, ::1] cols, real[:, :, :, ::1] out,
            Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t pt, Py_ssize_t pl):
    cdef Py_ssize_t n = out.shape[0], h = out.shape[1], w = out.shape[2], c = out.shape[3]
    cdef Py_ssize_t ho = cols.shape[1], wo = cols.shape[2]
    cdef Py_ssize_t kh = cols.shape[3], kw = cols.shape[4]
    cdef Py_ssize_t b, oi, oj, i, j, r, q, ch
    with nogil:
        for b in range(n):
            for oi in range(ho):
                for i in range(kh):
                    r = oi * sh + i - pt
                    if r < 0 or r >= h:
                        continue
                    for oj in range(wo):
                        for j in range(kw):
                            q = oj * sw + j - pl
                            if q < 0 or q >= w:
                                continue
                            for ch in range(c):
                                out[b, r, q, ch] += cols[b, oi, oj, i, j, ch]


def col2im(cols, in_shape, sh, sw, pad):
    pt, pb, pl, pr = pad
    cols = np.ascontiguousarray(cols)
    out = np.zeros(in_shape, dtype=cols.dtype)
    _col2im(cols, out, sh, sw, pt, pl)
    return out


def _maxpool_fwd(real[:, :, :, ::1] x, real[:, :, :, ::1] out, cnp.int64_t[:, :, :, ::1] index,
                 Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t sh, Py_ssize_t sw,
                 Py_ssize_t pt, Py_ssize_t pl):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ho = out.shape[1], wo = out.shape[2]
    cdef Py_ssize_t b, oi, oj, i, j, r, q, ch, best_idx
    cdef real best, v
    with nogil:
        for b in range(n):
            for oi in range(ho):
                for oj in range(wo):
                    for ch in range(c):
                        best_idx = -1
                        best = 0
                        for i in range(kh):
                            r = oi * sh + i - pt
                            if r < 0 or r >= h:
                                continue
                            for j in range(kw):
                                q = oj * sw + j - pl
                                if q < 0 or q >= w:
                                    continue
                                v = x[b, r, q, ch]
                                if best_idx < 0 or v > best:
                                    best = v
                                    best_idx = r * w + q
                        out[b, oi, oj, ch] = best
                        index[b, oi, oj, ch] = best_idx


def maxpool_forward(x, kh, kw, sh, sw, pad):
    pt, pb, pl, pr = pad
    x = np.ascontiguousarray(x)
    n, h, w, c = x.shape
    ho = out_size(h, kh, sh, pt, pb)
    wo = out_size(w, kw, sw, pl, pr)
    out = np.empty((n, ho, wo, c), dtype=x.dtype)
    index = np.empty((n, ho, wo, c), dtype=np.int64)
    _maxpool_fwd(x, out, index, kh, kw, sh, sw, pt, pl)
    return out, index


def _maxpool_bwd(real[:, :, :, ::1] dout, cnp.int64_t[:, :, :, ::1] index, real[:, :, ::1] dx):
    cdef Py_ssize_t n = dout.shape[0], ho = dout.shape[1], wo = dout.shape[2], c = dout.shape[3]
    cdef Py_ssize_t b, oi, oj, ch
    with nogil:
        for b in range(n):
            for oi in range(ho):
                for oj in range(wo):
                    for ch in range(c):
                        dx[b, index[b, oi, oj, ch], ch] += dout[b, oi, oj, ch]


def maxpool_backward(dout, index, in_shape):
    n, h, w, c = in_shape
    dout = np.ascontiguousarray(dout)
    dx = np.zeros((n, h * w, c), dtype=dout.dtype)
    _maxpool_bwd(dout, np.ascontiguousarray(index, dtype=np.int64), dx)
    return dx.reshape(n, h, w, c)
