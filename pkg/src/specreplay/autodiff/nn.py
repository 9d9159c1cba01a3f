"""Layer objects holding parameters, plus a small ``Module`` container."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..errors import ShapeError
from . import ops
from .tensor import Tensor


def he_normal_init(shape, fan_in, rng, dtype=np.float64):
    """i.i.d. N(0, 2 / fan_in) entries."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Module:
    training = True

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def named_buffers(self, prefix=""):
        for key, value in vars(self).items():
            if key.startswith("running_") and isinstance(value, np.ndarray):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{key}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        state = OrderedDict((k, p.data.copy()) for k, p in self.named_parameters())
        state.update((k, b.copy()) for k, b in self.named_buffers())
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state dict missing entries: {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ShapeError(f"{k}: checkpoint shape {state[k].shape} vs model {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)
        for k, b in buffers.items():
            b[...] = state[k]

    def astype(self, dtype):
        """Cast parameters and running buffers in place."""
        for p in self.parameters():
            p.data = p.data.astype(dtype, copy=False)
        for m in self.modules():
            for key, value in vars(m).items():
                if key.startswith("running_") and isinstance(value, np.ndarray):
                    setattr(m, key, value.astype(dtype, copy=False))
        return self

    def num_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Dense(Module):
    def __init__(self, n_in, n_out, rng, dtype=np.float64):
        self.weight = he_normal_init((n_in, n_out), n_in, rng, dtype)
        self.bias = _zeros((n_out,), dtype)

    def forward(self, x):
        return ops.dense(x, self.weight, self.bias)


class Conv2d(Module):
    """NHWC conv with explicit ``(top, bottom, left, right)`` padding."""

    def __init__(self, c_in, c_out, kernel, stride, pad, rng, dtype=np.float64, bias=True):
        kh, kw = kernel
        self.stride = tuple(stride)
        self.pad = tuple(pad)
        self.weight = he_normal_init((kh, kw, c_in, c_out), kh * kw * c_in, rng, dtype)
        self.bias = _zeros((c_out,), dtype) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel, stride, pad, rng, dtype=np.float64, bias=True):
        self.stride = stride
        self.pad = tuple(pad)
        self.weight = he_normal_init((kernel, c_in, c_out), kernel * c_in, rng, dtype)
        self.bias = _zeros((c_out,), dtype) if bias else None

    def forward(self, x):
        return ops.conv1d(x, self.weight, self.bias, self.stride, self.pad)


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float64):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = _zeros((channels,), dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return ops.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             self.training, self.momentum, self.eps)


class GRU(Module):
    def __init__(self, n_in, hidden, rng, dtype=np.float64):
        self.hidden = hidden
        self.weight_x = he_normal_init((n_in, 3 * hidden), n_in, rng, dtype)
        self.weight_h = he_normal_init((hidden, 3 * hidden), hidden, rng, dtype)
        self.bias_x = _zeros((3 * hidden,), dtype)
        self.bias_h = _zeros((3 * hidden,), dtype)

    def forward(self, x):
        """Return ``(sequence, final_state)``."""
        seq = ops.gru(x, self.weight_x, self.weight_h, self.bias_x, self.bias_h)
        return seq, seq[:, -1, :]
