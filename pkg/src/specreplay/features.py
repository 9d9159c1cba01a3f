"""STFT front-end: magnitude/phase/PSD channels, MFCC+deltas, length fitting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct

from .errors import ConfigError, InputError, ShapeError

EPS = 1e-7
CHANNEL_KINDS = ("magnitude", "phase", "psd")
ALLOWED_NFFT = (512, 1024, 2048)


@dataclass
class FeatureConfig:
    window_ms: float = 50.0
    shift_ms: float = 20.0
    n_fft: int = 2048
    channels: tuple = ("magnitude",)
    target_frames: int = 120
    wave_segment_samples: int = 26244
    pre_emphasis: bool = False
    sample_rate: int = 16000

    def __post_init__(self):
        self.channels = tuple(self.channels)

    @property
    def win_length(self):
        return int(round(self.window_ms * self.sample_rate / 1000))

    @property
    def hop_length(self):
        return int(round(self.shift_ms * self.sample_rate / 1000))

    @property
    def n_bins(self):
        return self.n_fft // 2 + 1

    def validate(self):
        if self.n_fft not in ALLOWED_NFFT:
            raise ConfigError(f"n_fft must be one of {ALLOWED_NFFT}, got {self.n_fft}")
        if self.win_length > self.n_fft:
            raise ConfigError(f"window of {self.win_length} samples exceeds n_fft={self.n_fft}")
        if self.hop_length < 1 or self.win_length < 1:
            raise ConfigError("window and shift must be at least one sample")
        if not self.channels:
            raise ConfigError("channel list is empty")
        bad = [c for c in self.channels if c not in CHANNEL_KINDS]
        if bad or len(set(self.channels)) != len(self.channels):
            raise ConfigError(f"channels must be distinct members of {CHANNEL_KINDS}, got {self.channels}")
        if self.target_frames < 1 or self.wave_segment_samples < 1:
            raise ConfigError("target lengths must be >= 1")
        return self

    @classmethod
    def from_dict(cls, d):
        return cls(**d).validate()


@dataclass
class SpectroTensor:
    """frames x bins x channels array with the channel order recorded."""

    values: np.ndarray
    channel_kinds: tuple = field(default=("magnitude",))

    def __post_init__(self):
        self.channel_kinds = tuple(self.channel_kinds)
        if self.values.ndim != 3 or self.values.shape[2] != len(self.channel_kinds):
            raise ShapeError(f"values {self.values.shape} do not match channels {self.channel_kinds}")

    @property
    def frames(self):
        return self.values.shape[0]

    @property
    def bins(self):
        return self.values.shape[1]

    def channel(self, kind):
        return self.values[:, :, self.channel_kinds.index(kind)]


def _samples(clip_or_array):
    return np.asarray(getattr(clip_or_array, "samples", clip_or_array), dtype=np.float64)


def frame_count(n, win, hop):
    return (n - win) // hop + 1


def stft(clip, cfg):
    """One-sided STFT, frames x (n_fft/2 + 1), Hamming window zero-padded to n_fft."""
    cfg.validate()
    x = _samples(clip)
    if cfg.pre_emphasis:
        x = np.append(x[0], x[1:] - 0.97 * x[:-1])
    win, hop = cfg.win_length, cfg.hop_length
    if x.size < win:
        raise InputError(f"clip of {x.size} samples shorter than one {win}-sample window")
    frames = sliding_window_view(x, win)[::hop]
    return np.fft.rfft(frames * np.hamming(win), n=cfg.n_fft, axis=1)


def spectro_channels(spec, cfg):
    """Stack log-magnitude, wrapped phase and dB PSD channels in ``cfg.channels`` order."""
    if not cfg.channels:
        raise ConfigError("channel list is empty")
    mag = np.abs(spec)
    w = np.hamming(cfg.win_length)
    layers = []
    for kind in cfg.channels:
        if kind == "magnitude":
            layers.append(np.log(mag + EPS))
        elif kind == "phase":
            ph = np.where(mag == 0, 0.0, np.angle(spec))
            layers.append(np.where(ph <= -np.pi, np.pi, ph))
        elif kind == "psd":
            layers.append(10 * np.log10(mag ** 2 / (cfg.sample_rate * np.sum(w * w)) + EPS))
        else:
            raise ConfigError(f"unknown channel kind {kind!r}")
    return SpectroTensor(np.stack(layers, axis=-1), cfg.channels)


def spectrogram(clip, cfg):
    return spectro_channels(stft(clip, cfg), cfg)


def stack_channels(tensors):
    """Concatenate channels of same-sized SpectroTensors (model-level ensemble input)."""
    if not tensors:
        raise ShapeError("nothing to stack")
    first = tensors[0]
    for t in tensors[1:]:
        if t.values.shape[:2] != first.values.shape[:2]:
            raise ShapeError(f"cannot stack {t.values.shape[:2]} with {first.values.shape[:2]}")
    kinds = sum((t.channel_kinds for t in tensors), ())
    return SpectroTensor(np.concatenate([t.values for t in tensors], axis=2), kinds)


def _fit(n, target, mode, rng):
    """Index vector implementing crop/tile for train mode."""
    if mode == "eval" or n == target:
        return None
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if n > target:
        start = int(rng.integers(0, n - target + 1))
        return np.arange(start, start + target)
    return np.arange(target) % n


def fit_length(t, cfg, mode, rng=None):
    idx = _fit(t.frames, cfg.target_frames, mode, rng)
    if idx is None:
        return t
    return SpectroTensor(t.values[idx], t.channel_kinds)


def segment_waveform(clip, cfg, mode, rng=None):
    x = _samples(clip)
    idx = _fit(x.size, cfg.wave_segment_samples, mode, rng)
    return x if idx is None else x[idx]


# MFCC ------------------------------------------------------------------------

def hz_to_mel(f):
    return 1127.0 * np.log(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (np.exp(np.asarray(m) / 1127.0) - 1.0)


def mel_filterbank(n_filters, n_fft, rate, fmin=20.0, fmax=None):
    """Triangular filters on the mel scale, shape (n_filters, n_fft/2 + 1)."""
    fmax = fmax or rate / 2
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.fft.rfftfreq(n_fft, 1 / rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def cepstra(log_energies, n_ceps=20):
    """Orthonormal DCT-II of log filterbank energies, coefficients 0..n_ceps-1."""
    return dct(np.asarray(log_energies), type=2, norm="ortho", axis=-1)[..., :n_ceps]


def deltas(feats, width=2):
    """Regression deltas over +-``width`` frames with edge replication."""
    n = feats.shape[0]
    padded = np.pad(feats, ((width, width), (0, 0)), mode="edge")
    num = sum(k * (padded[width + k:width + k + n] - padded[width - k:width - k + n]) for k in range(1, width + 1))
    return num / (2 * sum(k * k for k in range(1, width + 1)))


def mfcc_with_deltas(clip, rate=16000, n_ceps=20, n_filters=40, window_ms=25.0, shift_ms=10.0):
    """20 MFCCs plus deltas and delta-deltas, frames x 60."""
    x = _samples(clip)
    rate = getattr(clip, "sample_rate", rate)
    win = int(round(window_ms * rate / 1000))
    hop = int(round(shift_ms * rate / 1000))
    if x.size < win:
        raise InputError(f"clip of {x.size} samples shorter than one {win}-sample MFCC window")
    n_fft = 1 << (win - 1).bit_length()
    frames = sliding_window_view(x, win)[::hop]
    power = np.abs(np.fft.rfft(frames * np.hamming(win), n=n_fft, axis=1)) ** 2
    fbank = power @ mel_filterbank(n_filters, n_fft, rate).T
    static = cepstra(np.log(np.maximum(fbank, 1e-10)), n_ceps)
    d1 = deltas(static)
    return np.hstack([static, d1, deltas(d1)])


# normalization ---------------------------------------------------------------

@dataclass
class ChannelNorm:
    """Per-channel mean/std computed on a training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, arrays):
        """``arrays``: iterable of (..., channels) arrays."""
        total = None
        sq = None
        count = 0
        for a in arrays:
            flat = a.reshape(-1, a.shape[-1]).astype(np.float64)
            s, s2 = flat.sum(axis=0), (flat * flat).sum(axis=0)
            total = s if total is None else total + s
            sq = s2 if sq is None else sq + s2
            count += flat.shape[0]
        mean = total / count
        var = np.maximum(sq / count - mean ** 2, 0.0)
        return cls(mean, np.sqrt(var) + 1e-8)

    def apply(self, a):
        return (a - self.mean) / self.std
