"""Differentiable operations.

Every function takes :class:`Tensor` (or array-like) inputs and returns a
Tensor whose backward closure routes gradients to its parents. Layout
conventions: images are NHWC, sequences are (N, T, D).
"""
from __future__ import annotations

import numpy as np

from ..errors import InputError, ShapeError
from . import kernels
from .tensor import Tensor, accumulate, as_tensor, make_node


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise -----------------------------------------------------------------

def add(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)

    def backward(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(g, b.shape))

    return make_node(a.data + b.data, (a, b), backward)


def sub(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)

    def backward(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(-g, b.shape))

    return make_node(a.data - b.data, (a, b), backward)


def mul(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)

    def backward(g):
        accumulate(a, _unbroadcast(g * b.data, a.shape))
        accumulate(b, _unbroadcast(g * a.data, b.shape))

    return make_node(a.data * b.data, (a, b), backward)


def neg(a):
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: accumulate(a, -g))


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(np.maximum(x.data, 0).astype(x.dtype), (x,), lambda g: accumulate(x, g * mask))  # NaN propagates


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x):
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return make_node(s, (x,), lambda g: accumulate(x, g * s * (1 - s)))


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.data)
    return make_node(t, (x,), lambda g: accumulate(x, g * (1 - t * t)))


def exp(x):
    x = as_tensor(x)
    e = np.exp(x.data)
    return make_node(e, (x,), lambda g: accumulate(x, g * e))


def log(x):
    x = as_tensor(x)
    return make_node(np.log(x.data), (x,), lambda g: accumulate(x, g / x.data))


# reductions and shape ----------------------------------------------------------

def sum(x, axis=None, keepdims=False):  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        accumulate(x, np.broadcast_to(g, x.shape).copy())

    return make_node(np.asarray(out), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), np.asarray(1.0 / count, dtype=x.dtype))


def reshape(x, shape):
    x = as_tensor(x)
    return make_node(x.data.reshape(shape), (x,), lambda g: accumulate(x, g.reshape(x.shape)))


def transpose(x, axes=None):
    x = as_tensor(x)
    inv = None if axes is None else np.argsort(axes)
    return make_node(np.transpose(x.data, axes), (x,), lambda g: accumulate(x, np.transpose(g, inv)))


def getitem(x, idx):
    x = as_tensor(x)

    parts = idx if isinstance(idx, tuple) else (idx,)
    advanced = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def backward(g):
        full = np.zeros_like(x.data)
        if advanced:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        accumulate(x, full)

    return make_node(x.data[idx], (x,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            accumulate(t, g[tuple(sl)])

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# linear algebra ----------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if a.ndim > 2 and b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            accumulate(b, gb)

    return make_node(a.data @ b.data, (a, b), backward)


def dense(x, w, b=None):
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {w.shape}")
    y = matmul(x, w)
    return y if b is None else add(y, b)


# softmax family --------------------------------------------------------------

def _log_softmax(v, axis=-1):
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(x, axis=-1):
    x = as_tensor(x)
    s = np.exp(_log_softmax(x.data, axis))

    def backward(g):
        accumulate(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return make_node(s, (x,), backward)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    ls = _log_softmax(x.data, axis)

    def backward(g):
        accumulate(x, g - np.exp(ls) * g.sum(axis=axis, keepdims=True))

    return make_node(ls, (x,), backward)


def cross_entropy(logits, labels):
    """Mean negative log-softmax probability of the true class."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be (n, k), got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: labels shape {labels.shape} vs logits {logits.shape}")
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= k:
        raise InputError(f"cross_entropy: labels must be integers in [0, {k})")
    ls = _log_softmax(logits.data)
    rows = np.arange(n)
    loss = -ls[rows, labels].mean()

    def backward(g):
        d = np.exp(ls)
        d[rows, labels] -= 1.0
        accumulate(logits, d * (g / n))

    return make_node(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def center_loss(embeddings, labels, centers):
    """(1/2n) * sum_i ||x_i - c_{y_i}||^2; ``centers`` is a constant array."""
    embeddings = as_tensor(embeddings)
    labels = np.asarray(labels)
    centers = np.asarray(centers)
    if embeddings.ndim != 2 or centers.shape[1:] != embeddings.shape[1:]:
        raise ShapeError(f"center_loss: embeddings {embeddings.shape} vs centers {centers.shape}")
    n = embeddings.shape[0]
    diff = embeddings.data - centers[labels]
    loss = 0.5 * (diff * diff).sum() / n
    return make_node(np.asarray(loss, dtype=embeddings.dtype), (embeddings,),
                     lambda g: accumulate(embeddings, diff * (g / n)))


# convolution and pooling ------------------------------------------------------

def _pad4(pad):
    if isinstance(pad, int):
        return (pad, pad, pad, pad)
    pad = tuple(int(p) for p in pad)
    if len(pad) == 2:
        return (pad[0], pad[0], pad[1], pad[1])
    return pad


def conv2d(x, w, b=None, stride=(1, 1), pad=0):
    """NHWC convolution (cross-correlation); ``w`` is (kh, kw, C_in, C_out)."""
    x, w = as_tensor(x), as_tensor(w)
    pad = _pad4(pad)
    sh, sw = stride
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    n, h, wd, c = x.shape
    kh, kw, _, o = w.shape
    if h + pad[0] + pad[1] < kh or wd + pad[2] + pad[3] < kw:
        raise ShapeError(f"conv2d: input {x.shape} smaller than kernel {w.shape} after padding {pad}")
    cols = kernels.im2col(x.data, kh, kw, sh, sw, pad)
    ho, wo = cols.shape[1], cols.shape[2]
    cmat = cols.reshape(n * ho * wo, kh * kw * c)
    wmat = w.data.reshape(kh * kw * c, o)
    out = (cmat @ wmat).reshape(n, ho, wo, o)
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
        parents = (x, w, b)

    def backward(g):
        gm = g.reshape(-1, o)
        if w.requires_grad:
            accumulate(w, (cmat.T @ gm).reshape(w.shape))
        if b is not None and b.requires_grad:
            accumulate(b, gm.sum(axis=0))
        if x.requires_grad:
            dcols = (gm @ wmat.T).reshape(n, ho, wo, kh, kw, c)
            accumulate(x, kernels.col2im(dcols, x.shape, sh, sw, pad))

    return make_node(out, parents, backward)


def conv1d(x, w, b=None, stride=1, pad=0):
    """(N, L, C) convolution; ``w`` is (k, C_in, C_out); ``pad`` is (left, right)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernel {w.shape}")
    pl, pr = (pad, pad) if isinstance(pad, int) else pad
    n, length, c = x.shape
    y = conv2d(reshape(x, (n, 1, length, c)), reshape(w, (1,) + w.shape), b,
               stride=(1, stride), pad=(0, 0, pl, pr))
    return reshape(y, (n, y.shape[2], y.shape[3]))


def maxpool2d(x, kernel, stride=None, pad=0):
    x = as_tensor(x)
    kh, kw = kernel
    sh, sw = stride or kernel
    pad = _pad4(pad)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d: expected NHWC input, got {x.shape}")
    if max(pad[:2]) >= kh or max(pad[2:]) >= kw:
        raise ShapeError(f"maxpool2d: padding {pad} must be smaller than the kernel {kernel}")
    out, index = kernels.maxpool_forward(x.data, kh, kw, sh, sw, pad)

    def backward(g):
        accumulate(x, kernels.maxpool_backward(g, index, x.shape))

    return make_node(out, (x,), backward)


def maxpool1d(x, kernel, stride=None, pad=0):
    x = as_tensor(x)
    pl, pr = (pad, pad) if isinstance(pad, int) else pad
    n, length, c = x.shape
    y = maxpool2d(reshape(x, (n, 1, length, c)), (1, kernel), (1, stride or kernel), (0, 0, pl, pr))
    return reshape(y, (n, y.shape[2], y.shape[3]))


# normalization ---------------------------------------------------------------

def batchnorm(x, gamma, beta, running_mean, running_var, training, momentum=0.9, eps=1e-5):
    """Normalize over every axis but the last.

    In training mode batch statistics are used and the running buffers are
    updated in place (``running = momentum * running + (1 - momentum) * batch``).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = tuple(range(x.ndim - 1))
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.data.size // x.shape[-1]
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = (gamma.data * xhat + beta.data).astype(x.dtype, copy=False)

    def backward(g):
        accumulate(gamma, (g * xhat).sum(axis=axes))
        accumulate(beta, g.sum(axis=axes))
        if not x.requires_grad:
            return
        gx = g * gamma.data
        if training:
            gx = inv * (gx - gx.mean(axis=axes) - xhat * (gx * xhat).mean(axis=axes))
        else:
            gx = gx * inv
        accumulate(x, gx)

    return make_node(out, (x, gamma, beta), backward)


# recurrent ---------------------------------------------------------------------

def gru(x, wx, wh, bx, bh):
    """Single-layer GRU over (N, T, D) with zero initial state.

    Gates are packed ``[reset, update, candidate]`` along the last weight axis:
    ``r = s(x Wx_r + bx_r + h Wh_r + bh_r)``, ``z`` likewise,
    ``n = tanh(x Wx_n + bx_n + r * (h Wh_n + bh_n))``, ``h' = (1 - z) n + z h``.
    Returns the full hidden sequence (N, T, H); the final state is its last step.
    """
    x, wx, wh, bx, bh = (as_tensor(t) for t in (x, wx, wh, bx, bh))
    if x.ndim != 3 or x.shape[2] != wx.shape[0]:
        raise ShapeError(f"gru: input {x.shape} incompatible with input weights {wx.shape}")
    n, steps, d = x.shape
    hid = wh.shape[0]
    gx = (x.data.reshape(-1, d) @ wx.data + bx.data).reshape(n, steps, 3 * hid)
    seq = np.empty((n, steps, hid), dtype=x.dtype)
    r_s, z_s, n_s, ghn_s = (np.empty_like(seq) for _ in range(4))
    h = np.zeros((n, hid), dtype=x.dtype)
    for t in range(steps):
        gh = h @ wh.data + bh.data
        r = _sigmoid(gx[:, t, :hid] + gh[:, :hid])
        z = _sigmoid(gx[:, t, hid:2 * hid] + gh[:, hid:2 * hid])
        cand = np.tanh(gx[:, t, 2 * hid:] + r * gh[:, 2 * hid:])
        h = (1 - z) * cand + z * h
        seq[:, t] = h
        r_s[:, t], z_s[:, t], n_s[:, t], ghn_s[:, t] = r, z, cand, gh[:, 2 * hid:]

    def backward(g):
        dgx = np.empty((n, steps, 3 * hid), dtype=g.dtype)
        dwh = np.zeros_like(wh.data)
        dbh = np.zeros_like(bh.data)
        carry = np.zeros((n, hid), dtype=g.dtype)
        for t in range(steps - 1, -1, -1):
            dh = g[:, t] + carry
            r, z, cand, ghn = r_s[:, t], z_s[:, t], n_s[:, t], ghn_s[:, t]
            h_prev = seq[:, t - 1] if t > 0 else np.zeros_like(dh)
            dcand = dh * (1 - z) * (1 - cand * cand)
            dz = dh * (h_prev - cand) * z * (1 - z)
            dr = dcand * ghn * r * (1 - r)
            dgh = np.concatenate([dr, dz, dcand * r], axis=1)
            dgx[:, t] = np.concatenate([dr, dz, dcand], axis=1)
            dwh += h_prev.T @ dgh
            dbh += dgh.sum(axis=0)
            carry = dh * z + dgh @ wh.data.T
        flat = dgx.reshape(-1, 3 * hid)
        accumulate(wx, x.data.reshape(-1, d).T @ flat)
        accumulate(bx, flat.sum(axis=0))
        accumulate(wh, dwh)
        accumulate(bh, dbh)
        if x.requires_grad:
            accumulate(x, (flat @ wx.data.T).reshape(x.shape))

    return make_node(seq, (x, wx, wh, bx, bh), backward)
