"""CNN-GRU spoofing classifiers and the i-vector DNN.

Every model maps a batch to ``(logits, embedding)``; output node 0 is the
bona-fide class and its softmax probability is the detection score.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.nn import GRU, BatchNorm, Conv1d, Conv2d, Dense, Module
from .autodiff.tensor import Tensor
from .errors import ConfigError, InputError, ShapeError

BONAFIDE_NODE = 0


@dataclass
class SpecCnnGruConfig:
    input_bins: int = 1025
    input_channels: int = 1
    conv1_maps: int = 16
    conv1_kernel: tuple = (3, 7)
    res_maps: tuple = (32, 64, 128)
    res_kernel: tuple = (3, 5)
    res_stride: tuple = (2, 4)
    gru_units: int = 512
    dense_units: int = 64
    n_classes: int = 2
    bn_momentum: float = 0.9

    def __post_init__(self):
        self.conv1_kernel = tuple(self.conv1_kernel)
        self.res_maps = tuple(self.res_maps)
        self.res_kernel = tuple(self.res_kernel)
        self.res_stride = tuple(self.res_stride)

    def validate(self):
        if not 1 <= self.input_channels <= 3:
            raise ConfigError(f"input_channels must be 1..3, got {self.input_channels}")
        if self.input_bins < 1 or not self.res_maps:
            raise ConfigError("input_bins and res_maps must be non-empty")
        return self

    @property
    def min_frames(self):
        return self.res_stride[0] ** len(self.res_maps)


@dataclass
class WaveCnnGruConfig:
    frame_kernel: int = 3
    frame_stride: int = 3
    frame_maps: int = 64
    block_maps: tuple = (64, 64, 128, 128)
    block_kernel: int = 3
    pool: int = 3
    gru_units: int = 512
    dense_units: int = 64
    n_classes: int = 2
    bn_momentum: float = 0.9

    def __post_init__(self):
        self.block_maps = tuple(self.block_maps)

    def validate(self):
        if not self.block_maps or self.frame_stride < 1 or self.pool < 1:
            raise ConfigError("wave model needs at least one block and positive strides")
        return self

    @property
    def min_samples(self):
        return self.frame_stride * self.pool ** len(self.block_maps)


@dataclass
class IvecDnnConfig:
    input_dim: int = 200
    hidden: tuple = field(default=(1024, 1024, 1024))
    n_classes: int = 2

    def __post_init__(self):
        self.hidden = tuple(self.hidden)

    def validate(self):
        if self.input_dim < 1 or not self.hidden:
            raise ConfigError("ivec DNN needs a positive input width and hidden layers")
        return self


def _same_pad(k):
    return ((k - 1) // 2, k // 2)


class PreActBlock2d(Module):
    """BN-ReLU-conv(stride)-BN-ReLU-conv with a 1x1 projection shortcut when shapes change."""

    def __init__(self, c_in, c_out, kernel, stride, rng, dtype, momentum=0.9):
        kh, kw = kernel
        (pt, pb), (pl, pr) = _same_pad(kh), _same_pad(kw)
        self.bn1 = BatchNorm(c_in, momentum, dtype=dtype)
        self.conv_a = Conv2d(c_in, c_out, kernel, stride, (pt, pb, pl, pr), rng, dtype)
        self.bn2 = BatchNorm(c_out, momentum, dtype=dtype)
        self.conv_b = Conv2d(c_out, c_out, kernel, (1, 1), (pt, pb, pl, pr), rng, dtype)
        needs_proj = c_in != c_out or tuple(stride) != (1, 1)
        self.shortcut = Conv2d(c_in, c_out, (1, 1), stride, (0, 0, 0, 0), rng, dtype) if needs_proj else None

    def forward(self, x):
        h = ops.relu(self.bn1(x))
        out = self.conv_b(ops.relu(self.bn2(self.conv_a(h))))
        return ops.add(out, self.shortcut(h) if self.shortcut is not None else x)


class PreActBlock1d(Module):
    def __init__(self, c_in, c_out, kernel, rng, dtype, momentum=0.9):
        pad = _same_pad(kernel)
        self.bn1 = BatchNorm(c_in, momentum, dtype=dtype)
        self.conv_a = Conv1d(c_in, c_out, kernel, 1, pad, rng, dtype)
        self.bn2 = BatchNorm(c_out, momentum, dtype=dtype)
        self.conv_b = Conv1d(c_out, c_out, kernel, 1, pad, rng, dtype)
        self.shortcut = Conv1d(c_in, c_out, 1, 1, (0, 0), rng, dtype) if c_in != c_out else None

    def forward(self, x):
        h = ops.relu(self.bn1(x))
        out = self.conv_b(ops.relu(self.bn2(self.conv_a(h))))
        return ops.add(out, self.shortcut(h) if self.shortcut is not None else x)


class SpecCnnGru(Module):
    """Spectrogram CNN-GRU. Input (N, frames, bins, channels)."""

    kind = "spec"

    def __init__(self, cfg, rng, dtype=np.float64):
        self.cfg = cfg.validate()
        kh, kw = cfg.conv1_kernel
        (pt, pb), (pl, pr) = _same_pad(kh), _same_pad(kw)
        self.conv1 = Conv2d(cfg.input_channels, cfg.conv1_maps, cfg.conv1_kernel, (1, 1), (pt, pb, pl, pr), rng, dtype)
        widths = (cfg.conv1_maps,) + cfg.res_maps
        self.blocks = [PreActBlock2d(a, b, cfg.res_kernel, cfg.res_stride, rng, dtype, cfg.bn_momentum)
                       for a, b in zip(widths[:-1], widths[1:])]
        self.bn_out = BatchNorm(cfg.res_maps[-1], cfg.bn_momentum, dtype=dtype)
        self.gru = GRU(cfg.res_maps[-1], cfg.gru_units, rng, dtype)
        self.dense1 = Dense(cfg.gru_units, cfg.dense_units, rng, dtype)
        self.output = Dense(cfg.dense_units, cfg.n_classes, rng, dtype)
        self.shapes = {}

    def pooled_width(self):
        w = self.cfg.input_bins
        for _ in self.cfg.res_maps:
            w = math.ceil(w / self.cfg.res_stride[1])
        return w

    def forward(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[2:] != (self.cfg.input_bins, self.cfg.input_channels):
            raise ShapeError(f"spec model expects (N, frames, {self.cfg.input_bins}, {self.cfg.input_channels}), got {x.shape}")
        if x.shape[1] < self.cfg.min_frames:
            raise ShapeError(f"spec model needs >= {self.cfg.min_frames} frames, got {x.shape[1]}")
        shapes = {}
        h = self.conv1(x)
        shapes["Conv1"] = h.shape[1:]
        for i, block in enumerate(self.blocks, start=1):
            h = block(h)
            shapes[f"Res{i}"] = h.shape[1:]
        h = ops.relu(self.bn_out(h))
        width = h.shape[2]
        h = ops.maxpool2d(h, (1, width), (1, width))
        shapes["Pool"] = h.shape[1:]
        n, t = h.shape[0], h.shape[1]
        _, final = self.gru(ops.reshape(h, (n, t, h.shape[3])))
        shapes["GRU"] = final.shape[1:]
        emb = self.dense1(final)
        shapes["Dense1"] = emb.shape[1:]
        logits = self.output(ops.relu(emb))
        shapes["Output"] = logits.shape[1:]
        self.shapes = shapes
        return logits, emb

    def shape_chain(self, frames):
        """Per-layer output shapes (batch axis dropped) for a ``frames``-long input."""
        was = self.training
        self.eval()
        self.forward(np.zeros((1, frames, self.cfg.input_bins, self.cfg.input_channels), dtype=self.conv1.weight.dtype))
        self.train(was)
        return dict(self.shapes)


class WaveCnnGru(Module):
    """Raw-waveform CNN-GRU. Input (N, samples)."""

    kind = "wave"

    def __init__(self, cfg, rng, dtype=np.float64):
        self.cfg = cfg.validate()
        self.frame_conv = Conv1d(1, cfg.frame_maps, cfg.frame_kernel, cfg.frame_stride, (0, 0), rng, dtype)
        self.frame_bn = BatchNorm(cfg.frame_maps, cfg.bn_momentum, dtype=dtype)
        widths = (cfg.frame_maps,) + cfg.block_maps
        self.blocks = [PreActBlock1d(a, b, cfg.block_kernel, rng, dtype, cfg.bn_momentum)
                       for a, b in zip(widths[:-1], widths[1:])]
        self.bn_out = BatchNorm(cfg.block_maps[-1], cfg.bn_momentum, dtype=dtype)
        self.gru = GRU(cfg.block_maps[-1], cfg.gru_units, rng, dtype)
        self.dense1 = Dense(cfg.gru_units, cfg.dense_units, rng, dtype)
        self.output = Dense(cfg.dense_units, cfg.n_classes, rng, dtype)
        self.shapes = {}

    def forward(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 2:
            raise ShapeError(f"wave model expects (N, samples), got {x.shape}")
        if x.shape[1] < self.cfg.min_samples:
            raise InputError(f"wave model needs >= {self.cfg.min_samples} samples, got {x.shape[1]}")
        shapes = {}
        h = self.frame_conv(ops.reshape(x, x.shape + (1,)))
        h = ops.relu(self.frame_bn(h))
        shapes["Frames"] = h.shape[1:]
        for i, block in enumerate(self.blocks, start=1):
            h = ops.maxpool1d(block(h), self.cfg.pool)
            shapes[f"Res{i}"] = h.shape[1:]
        h = ops.relu(self.bn_out(h))
        _, final = self.gru(h)
        shapes["GRU"] = final.shape[1:]
        emb = self.dense1(final)
        shapes["Dense1"] = emb.shape[1:]
        logits = self.output(ops.relu(emb))
        shapes["Output"] = logits.shape[1:]
        self.shapes = shapes
        return logits, emb


class IvecDnn(Module):
    """Fully connected classifier over i-vectors. Input (N, input_dim)."""

    kind = "ivec"

    def __init__(self, cfg, rng, dtype=np.float64):
        self.cfg = cfg.validate()
        widths = (cfg.input_dim,) + cfg.hidden
        self.hidden = [Dense(a, b, rng, dtype) for a, b in zip(widths[:-1], widths[1:])]
        self.output = Dense(cfg.hidden[-1], cfg.n_classes, rng, dtype)

    def forward(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 2 or x.shape[1] != self.cfg.input_dim:
            raise ShapeError(f"ivec DNN expects (N, {self.cfg.input_dim}), got {x.shape}")
        h = x
        for layer in self.hidden:
            h = ops.relu(layer(h))
        return self.output(h), h


def build_spec_cnngru(cfg=None, rng=None, dtype=np.float64):
    return SpecCnnGru(cfg or SpecCnnGruConfig(), rng if rng is not None else np.random.default_rng(0), dtype)


def build_wave_cnngru(cfg=None, rng=None, dtype=np.float64):
    return WaveCnnGru(cfg or WaveCnnGruConfig(), rng if rng is not None else np.random.default_rng(0), dtype)


def build_ivec_dnn(cfg=None, rng=None, dtype=np.float64):
    return IvecDnn(cfg or IvecDnnConfig(), rng if rng is not None else np.random.default_rng(0), dtype)


CONFIGS = {"spec": SpecCnnGruConfig, "wave": WaveCnnGruConfig, "ivec": IvecDnnConfig}
BUILDERS = {"spec": build_spec_cnngru, "wave": build_wave_cnngru, "ivec": build_ivec_dnn}


def build_model(kind, cfg_dict=None, rng=None, dtype=np.float64):
    if kind not in BUILDERS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {sorted(BUILDERS)}")
    return BUILDERS[kind](CONFIGS[kind](**(cfg_dict or {})), rng, dtype)


def model_config_dict(model):
    d = asdict(model.cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def softmax_scores(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p[:, BONAFIDE_NODE] / p.sum(axis=1)


def infer_score(model, features):
    """Bona-fide posterior for one eval-mode input (no batch axis)."""
    was = model.training
    model.eval()
    try:
        logits, _ = model(np.asarray(features)[None].astype(model.parameters()[0].dtype, copy=False))
    finally:
        model.train(was)
    return float(softmax_scores(logits.data)[0])
