"""Batch construction and the training loop."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff.losses import center_loss, cross_entropy, update_centers
from .autodiff.optim import OptState, amsgrad_step
from .errors import ConfigError, InputError, NumericError
from .features import _fit
from .metrics import compute_eer, compute_min_tdcf
from .models import softmax_scores

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0
    center_weight: float = 0.01
    center_alpha: float = 0.5
    eval_every: int = 1
    stop_at_train_acc: float | None = None
    dtype: str = "float32"

    def validate(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 1 or self.eval_every < 1:
            raise ConfigError("epochs and eval_every must be >= 1")
        if self.lr < 0 or self.weight_decay < 0 or self.center_weight < 0:
            raise ConfigError("lr, weight_decay and center_weight must be non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        return self

    @classmethod
    def from_dict(cls, d):
        return cls(**d).validate()


@dataclass
class Dataset:
    """Eval-mode inputs with labels (0 = bona-fide, 1 = spoof).

    ``target`` is the fixed training length along axis 0 of each item
    (frames or samples); None means items are already fixed-size.
    """

    items: list
    labels: np.ndarray
    ids: list
    target: int | None = None
    skipped: int = 0

    def __len__(self):
        return len(self.items)

    def fixed(self, i, rng):
        idx = _fit(self.items[i].shape[0], self.target, "train", rng) if self.target else None
        return self.items[i] if idx is None else self.items[i][idx]


def make_batches(dataset, batch_size, rng, dtype=np.float32):
    """One epoch of shuffled, length-fitted ``(inputs, labels)`` batches."""
    if len(dataset) == 0:
        raise InputError("empty dataset")
    order = rng.permutation(len(dataset))
    for lo in range(0, len(order), batch_size):
        sel = order[lo:lo + batch_size]
        x = np.stack([dataset.fixed(int(i), rng) for i in sel]).astype(dtype, copy=False)
        yield x, dataset.labels[sel]


@dataclass
class TrainLog:
    step_losses: list = field(default_factory=list)
    center_losses: list = field(default_factory=list)
    epoch_train_acc: list = field(default_factory=list)
    dev_evals: list = field(default_factory=list)
    best_epoch: int | None = None
    wall_clock: float = 0.0

    def lines(self, timing=False):
        """Line-delimited JSON records; wall clock only when ``timing`` is set."""
        out = []
        for step, (loss, closs) in enumerate(zip(self.step_losses, self.center_losses), start=1):
            out.append({"event": "step", "step": step, "loss": loss, "center_loss": closs})
        for epoch, acc in enumerate(self.epoch_train_acc, start=1):
            out.append({"event": "epoch", "epoch": epoch, "train_acc": acc})
        out.extend({"event": "dev", **d} for d in self.dev_evals)
        end = {"event": "end", "best_epoch": self.best_epoch}
        if timing:
            end["wall_clock_s"] = self.wall_clock
        out.append(end)
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in out)


def score_dataset(model, dataset, dtype=np.float32):
    """Bona-fide posteriors for whole (eval-mode) inputs, grouped by length."""
    was = model.training
    model.eval()
    scores = np.empty(len(dataset))
    groups = {}
    for i, item in enumerate(dataset.items):
        groups.setdefault(item.shape, []).append(i)
    try:
        for idx in groups.values():
            for lo in range(0, len(idx), 64):
                sel = idx[lo:lo + 64]
                x = np.stack([dataset.items[i] for i in sel]).astype(dtype, copy=False)
                logits, _ = model(x)
                scores[sel] = softmax_scores(logits.data.astype(np.float64))
    finally:
        model.train(was)
    return scores


def evaluate(scores, labels, params=None):
    bona, spoof = scores[labels == 0], scores[labels == 1]
    return {"eer": compute_eer((bona, spoof))[0], "min_tdcf": compute_min_tdcf((bona, spoof), params)}


def _grad_norms(model):
    return {k: float(np.linalg.norm(p.grad)) if p.grad is not None else 0.0 for k, p in model.named_parameters()}


def train_model(model, train_set, cfg, dev_set=None, tdcf_params=None, state=None):
    """Minimize cross-entropy + center_weight * center loss with AMSGrad.

    Returns ``(state_dict, log, extras)``; the state dict is the best dev-EER
    checkpoint when ``dev_set`` is given, the final one otherwise. ``extras``
    carries the optimizer state and class centers for resumption.
    """
    cfg.validate()
    labels = np.asarray(train_set.labels)
    if len(train_set) == 0 or len(np.unique(labels)) < 2:
        raise InputError("training set must contain both classes")
    dtype = np.dtype(cfg.dtype)
    model.astype(dtype)
    rng = np.random.default_rng(cfg.seed)
    opt = state["opt"] if state else OptState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    params = model.parameters()
    centers = None if not state else state["centers"]
    tlog = TrainLog()
    best = (math.inf, None)
    started = time.perf_counter()
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        correct = 0
        for x, y in make_batches(train_set, cfg.batch_size, rng, dtype):
            logits, emb = model(x)
            if centers is None:
                centers = np.zeros((logits.shape[1], emb.shape[1]), dtype=dtype)
            ce = cross_entropy(logits, y)
            closs = center_loss(emb, y, centers)
            loss = ce + closs * cfg.center_weight if cfg.center_weight else ce
            value = loss.item()
            if not math.isfinite(value):
                norms = _grad_norms(model)
                raise NumericError(f"non-finite loss at epoch {epoch} (lr={opt.lr}); grad norms {norms}")
            model.zero_grad()
            loss.backward()
            amsgrad_step(params, opt)
            centers = update_centers(centers, emb.data, y, cfg.center_alpha)
            tlog.step_losses.append(value)
            tlog.center_losses.append(closs.item())
            correct += int((logits.data.argmax(axis=1) == y).sum())
        acc = correct / len(train_set)
        tlog.epoch_train_acc.append(acc)
        if dev_set is not None and epoch % cfg.eval_every == 0:
            res = evaluate(score_dataset(model, dev_set, dtype), np.asarray(dev_set.labels), tdcf_params)
            tlog.dev_evals.append({"epoch": epoch, **res})
            if res["eer"] < best[0]:
                best = (res["eer"], model.state_dict())
                tlog.best_epoch = epoch
        log.debug("epoch %d loss %.4f train_acc %.3f", epoch, tlog.step_losses[-1], acc)
        if cfg.stop_at_train_acc is not None and acc >= cfg.stop_at_train_acc:
            break
    tlog.wall_clock = time.perf_counter() - started
    final = best[1] if best[1] is not None else model.state_dict()
    if best[1] is None:
        tlog.best_epoch = len(tlog.epoch_train_acc)
    model.load_state_dict(final)
    return final, tlog, {"opt": opt, "centers": centers}
