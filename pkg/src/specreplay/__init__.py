"""Replay-attack spoofing detection: high-resolution spectrograms, CNN-GRU models, fusion and evaluation."""

__version__ = "0.1.0"

from .audio import AudioClip, ProtocolEntry, SynthConfig, load_corpus, synthesize_corpus  # noqa: E402
from .errors import ConfigError, InputError, NumericError, SpecReplayError  # noqa: E402
from .features import FeatureConfig, spectrogram, stft  # noqa: E402
from .metrics import ScoreSet, TdcfParams, breakdown_report, compute_eer, compute_min_tdcf, fuse_scores  # noqa: E402

__all__ = [
    "AudioClip", "ProtocolEntry", "SynthConfig", "load_corpus", "synthesize_corpus",
    "ConfigError", "InputError", "NumericError", "SpecReplayError",
    "FeatureConfig", "spectrogram", "stft",
    "ScoreSet", "TdcfParams", "breakdown_report", "compute_eer", "compute_min_tdcf", "fuse_scores",
]
