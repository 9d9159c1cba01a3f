"""AMSGrad with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    v_hat: list = field(default_factory=list)

    def arrays(self):
        """Moment buffers as named arrays, for checkpointing."""
        out = {}
        for name, bufs in (("m", self.m), ("v", self.v), ("v_hat", self.v_hat)):
            for i, b in enumerate(bufs):
                out[f"opt.{name}.{i}"] = b
        return out

    def load_arrays(self, arrays, n_params):
        self.m = [np.array(arrays[f"opt.m.{i}"]) for i in range(n_params)]
        self.v = [np.array(arrays[f"opt.v.{i}"]) for i in range(n_params)]
        self.v_hat = [np.array(arrays[f"opt.v_hat.{i}"]) for i in range(n_params)]


def amsgrad_step(params, state):
    """One in-place update of ``params`` (tensors with populated ``grad``).

    m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2;  v_hat <- max(v_hat, v);
    theta <- theta - lr m / (sqrt(v_hat) + eps) - lr wd theta.
    No bias correction is applied.
    """
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        state.v_hat = [np.zeros_like(p.data) for p in params]
    state.t += 1
    for p, m, v, v_hat in zip(params, state.m, state.v, state.v_hat):
        g = np.zeros_like(p.data) if p.grad is None else p.grad.astype(p.dtype, copy=False)
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        np.maximum(v_hat, v, out=v_hat)
        step = state.lr * m / (np.sqrt(v_hat) + state.eps) + state.lr * state.weight_decay * p.data
        p.data = (p.data - step).astype(p.dtype, copy=False)
    return params
