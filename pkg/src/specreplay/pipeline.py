"""Experiment orchestration: feature preparation, system training, checkpoints, scoring.

A *system* is one trained classifier together with everything needed to score
new audio: its feature configuration, normalization statistics and (for the
i-vector system) the UBM and total-variability model.
"""
from __future__ import annotations

import copy
import json
import logging
from importlib import resources
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .audio import BONAFIDE, SPOOF
from .errors import ConfigError, InputError
from .features import ChannelNorm, FeatureConfig, mfcc_with_deltas, spectrogram
from .ivector import IvectorExtractor
from .metrics import ScoreEntry, ScoreSet, TdcfParams
from .models import build_model, model_config_dict
from .training import Dataset, TrainConfig, score_dataset, train_model

log = logging.getLogger(__name__)

KINDS = ("spec", "wave", "ivec")

@dataclass
class IvectorConfig:
    n_components: int = 256
    rank: int = 200
    ubm_iters: int = 10
    tv_iters: int = 5


@dataclass
class ExperimentConfig:
    """Declarative experiment: system kind plus feature/model/train sections."""

    kind: str = "spec"
    system_id: str | None = None
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    ivector: IvectorConfig = field(default_factory=IvectorConfig)
    tdcf: TdcfParams = field(default_factory=TdcfParams)

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown system kind {self.kind!r}; expected one of {KINDS}")
        self.features.validate()
        self.train.validate()
        self.tdcf.validate()
        return self

    @property
    def name(self):
        if self.system_id:
            return self.system_id
        if self.kind == "spec":
            return "spec-" + "&".join(self.features.channels)
        return self.kind

    @classmethod
    def from_dict(cls, d):
        known = {"kind", "system_id", "features", "model", "train", "ivector", "tdcf"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config sections: {sorted(unknown)}")
        try:
            cfg = cls(
                kind=d.get("kind", "spec"),
                system_id=d.get("system_id"),
                features=FeatureConfig(**d.get("features", {})),
                model=dict(d.get("model", {})),
                train=TrainConfig(**d.get("train", {})),
                ivector=IvectorConfig(**d.get("ivector", {})),
                tdcf=TdcfParams(**d.get("tdcf", {})),
            )
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc
        return cfg.validate()

    def to_dict(self):
        d = asdict(self)
        d["features"]["channels"] = list(self.features.channels)
        return d


def label_array(clips):
    labels = []
    for c in clips:
        if c.label not in (BONAFIDE, SPOOF):
            raise InputError(f"{c.utterance_id}: unlabeled clip in a training/dev set")
        labels.append(0 if c.label == BONAFIDE else 1)
    return np.array(labels, dtype=np.int64)


def _model_cfg(cfg, extractor=None):
    d = dict(cfg.model)
    if cfg.kind == "spec":
        d.setdefault("input_bins", cfg.features.n_bins)
        d.setdefault("input_channels", len(cfg.features.channels))
    elif cfg.kind == "ivec":
        d.setdefault("input_dim", cfg.ivector.rank)
    return d


@dataclass
class System:
    cfg: ExperimentConfig
    model: object
    norm: ChannelNorm | None = None
    extractor: IvectorExtractor | None = None

    @property
    def system_id(self):
        return self.cfg.name

    def raw_inputs(self, clips):
        """Un-normalized eval-mode inputs; clips whose features fail are skipped."""
        items, kept, skipped = [], [], 0
        for clip in clips:
            try:
                items.append(raw_input(self.cfg, clip, self.extractor))
                kept.append(clip)
            except InputError as exc:
                log.warning("skipping %s: %s", clip.utterance_id, exc)
                skipped += 1
        return items, kept, skipped

    def normalize(self, items):
        if self.norm is None:
            return [np.asarray(a, dtype=np.float32) for a in items]
        return [self.norm.apply(a).astype(np.float32) for a in items]

    def dataset(self, clips, labelled=True):
        items, kept, skipped = self.raw_inputs(clips)
        labels = label_array(kept) if labelled else np.zeros(len(kept), dtype=np.int64)
        target = {"spec": self.cfg.features.target_frames, "wave": self.cfg.features.wave_segment_samples}.get(self.cfg.kind)
        return Dataset(self.normalize(items), labels, [c.utterance_id for c in kept], target, skipped), kept

    def score(self, clips):
        ds, kept = self.dataset(clips, labelled=False)
        scores = score_dataset(self.model, ds, np.dtype(self.cfg.train.dtype))
        entries = [ScoreEntry(c.utterance_id, float(s), c.label, c.attacker_distance, c.speaker_quality)
                   for c, s in zip(kept, scores)]
        return ScoreSet(self.system_id, entries)

    # persistence ---------------------------------------------------------------

    def save(self, path, extras=None):
        tensors = {f"model.{k}": v for k, v in self.model.state_dict().items()}
        meta = {"experiment": self.cfg.to_dict(), "model_config": model_config_dict(self.model)}
        if self.norm is not None:
            tensors["norm.mean"] = self.norm.mean
            tensors["norm.std"] = self.norm.std
        if self.extractor is not None:
            tensors.update(self.extractor.arrays())
        if extras:
            opt = extras["opt"]
            tensors.update(opt.arrays())
            if extras.get("centers") is not None:
                tensors["centers"] = extras["centers"]
            meta["optimizer"] = {"t": opt.t, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
                                 "eps": opt.eps, "weight_decay": opt.weight_decay}
        container.save(path, tensors, meta)

    @classmethod
    def load(cls, path):
        tensors, meta = container.load(path)
        cfg = ExperimentConfig.from_dict(meta["experiment"])
        model = build_model(cfg.kind, meta["model_config"], np.random.default_rng(0), np.dtype(cfg.train.dtype))
        model.load_state_dict({k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")})
        norm = ChannelNorm(tensors["norm.mean"].astype(np.float64), tensors["norm.std"].astype(np.float64)) \
            if "norm.mean" in tensors else None
        extractor = IvectorExtractor.from_arrays(tensors) if "tv.t" in tensors else None
        return cls(cfg, model, norm, extractor)


def raw_input(cfg, clip, extractor=None):
    if cfg.kind == "spec":
        return spectrogram(clip, cfg.features).values
    if cfg.kind == "wave":
        return np.asarray(clip.samples)
    return extractor.transform(mfcc_with_deltas(clip))


def train_system(cfg, train_clips, dev_clips=None):
    """Fit features/normalization/i-vector front-end on the train split, then the DNN.

    Returns ``(system, train_log, extras)``.
    """
    cfg = copy.deepcopy(cfg).validate()
    seed = cfg.train.seed
    extractor = None
    if cfg.kind == "ivec":
        feats = [mfcc_with_deltas(c) for c in train_clips]
        iv = cfg.ivector
        extractor = IvectorExtractor.fit(feats, iv.n_components, iv.rank, iv.ubm_iters, iv.tv_iters,
                                         np.random.default_rng([seed, 2]))
        # round-trip through float32 so in-memory scoring equals scoring from a checkpoint
        extractor = IvectorExtractor.from_arrays({k: np.float32(v) for k, v in extractor.arrays().items()})
    model = build_model(cfg.kind, _model_cfg(cfg), np.random.default_rng([seed, 1]), np.dtype(cfg.train.dtype))
    system = System(cfg, model, None, extractor)
    raw, kept, skipped = system.raw_inputs(train_clips)
    if cfg.kind in ("spec", "ivec"):
        norm = ChannelNorm.fit(raw)
        system.norm = ChannelNorm(np.float32(norm.mean).astype(np.float64), np.float32(norm.std).astype(np.float64))
    train_set = Dataset(system.normalize(raw), label_array(kept), [c.utterance_id for c in kept],
                        {"spec": cfg.features.target_frames, "wave": cfg.features.wave_segment_samples}.get(cfg.kind),
                        skipped)
    dev_set = system.dataset(dev_clips)[0] if dev_clips else None
    _, tlog, extras = train_model(model, train_set, cfg.train, dev_set, cfg.tdcf)
    return system, tlog, extras


def default_config_dict():
    """The packaged desk-scale configuration (all sections, models keyed by kind)."""
    return json.loads(resources.files(__package__).joinpath("desk.json").read_text(encoding="utf-8"))


def read_config(path=None):
    if path is None:
        return default_config_dict()
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def apply_overrides(raw, overrides):
    """Apply ``section.key=value`` overrides; values parse as JSON, else stay strings."""
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass
        node = raw
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {part!r} is not a section")
        node[leaf] = value
    return raw


def experiment_from_config(raw, kind=None):
    """Build an :class:`ExperimentConfig` from a full config dict.

    The ``model`` section may hold one entry per kind; the entry for the
    selected kind is used.
    """
    d = {k: v for k, v in raw.items() if k != "synth"}
    if kind is not None:
        d["kind"] = kind
    kind = d.get("kind", "spec")
    model = d.get("model", {})
    if isinstance(model, dict) and set(model) & set(KINDS):
        d["model"] = model.get(kind, {})
    return ExperimentConfig.from_dict(d)


def desk_config(kind, channels=("magnitude",), seed=0, **feature_overrides):
    """Desk-scale experiment preset for ``kind`` with feature overrides."""
    raw = default_config_dict()
    raw["features"]["channels"] = list(channels)
    raw["features"].update(feature_overrides)
    raw["train"]["seed"] = seed
    return experiment_from_config(raw, kind)
