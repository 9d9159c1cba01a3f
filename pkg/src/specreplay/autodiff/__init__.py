"""Minimal reverse-mode autodiff engine sized for the CNN-GRU models."""
from . import ops
from .kernels import BACKEND
from .losses import center_loss, cross_entropy, update_centers
from .nn import GRU, BatchNorm, Conv1d, Conv2d, Dense, Module, he_normal_init
from .optim import OptState, amsgrad_step
from .tensor import Tensor

__all__ = [
    "BACKEND", "BatchNorm", "Conv1d", "Conv2d", "Dense", "GRU", "Module", "OptState", "Tensor",
    "amsgrad_step", "center_loss", "cross_entropy", "he_normal_init", "ops", "update_centers",
]
