"""Central finite-difference gradient checking."""
import numpy as np

from .tensor import Tensor


def numeric_grad(fn, arrays, wrt, h=1e-5):
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[wrt]
    grad = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = target[idx]
        target[idx] = orig + h
        fp = fn(*[Tensor(a.copy()) for a in base]).item()
        target[idx] = orig - h
        fm = fn(*[Tensor(a.copy()) for a in base]).item()
        target[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def analytic_grads(fn, arrays):
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    fn(*tensors).backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def max_relative_error(analytic, numeric, floor=1e-6):
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def check_gradients(fn, arrays, h=1e-5):
    """Largest relative error over every input of the scalar function ``fn``."""
    grads = analytic_grads(fn, arrays)
    worst = 0.0
    for i, g in enumerate(grads):
        worst = max(worst, max_relative_error(g, numeric_grad(fn, arrays, i, h)))
    return worst
