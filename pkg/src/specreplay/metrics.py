"""EER, minimum normalized t-DCF, score-level fusion and per-configuration reports.

Convention throughout: higher score means more bona-fide. At threshold ``t``
a bona-fide trial is missed when its score is ``< t`` and a spoof is falsely
accepted when its score is ``>= t``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .audio import BONAFIDE, CLASSES, SPOOF
from .errors import ConfigError, InputError, ParseError

CELLS = tuple(d + q for d in CLASSES for q in CLASSES)


@dataclass(frozen=True)
class ScoreEntry:
    utterance_id: str
    score: float
    label: str
    attacker_distance: str | None = None
    speaker_quality: str | None = None

    @property
    def config(self):
        if self.attacker_distance and self.speaker_quality:
            return self.attacker_distance + self.speaker_quality
        return None


@dataclass
class ScoreSet:
    system_id: str
    entries: list

    def __post_init__(self):
        ids = [e.utterance_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise InputError(f"{self.system_id}: duplicate utterance ids in score set")
        if not all(math.isfinite(e.score) for e in self.entries):
            raise InputError(f"{self.system_id}: non-finite scores")

    def split(self):
        bona = np.array([e.score for e in self.entries if e.label == BONAFIDE], dtype=np.float64)
        spoof = np.array([e.score for e in self.entries if e.label == SPOOF], dtype=np.float64)
        return bona, spoof

    def ids(self):
        return [e.utterance_id for e in self.entries]

    def to_text(self):
        return "".join(f"{e.utterance_id} {e.score!r}\n" for e in self.entries)

    @classmethod
    def from_arrays(cls, system_id, bona, spoof):
        entries = [ScoreEntry(f"b{i}", float(s), BONAFIDE) for i, s in enumerate(bona)]
        entries += [ScoreEntry(f"s{i}", float(s), SPOOF) for i, s in enumerate(spoof)]
        return cls(system_id, entries)


def parse_scores(text, protocol, system_id="system"):
    """Score file lines ``<utterance_id> <score>``, labelled from protocol entries."""
    by_id = {p.utterance_id: p for p in protocol}
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 2:
            raise ParseError(f"score line {lineno}: expected '<utterance_id> <score>'")
        p = by_id.get(fields[0])
        if p is None:
            raise ParseError(f"score line {lineno}: {fields[0]!r} not in protocol")
        try:
            score = float(fields[1])
        except ValueError as exc:
            raise ParseError(f"score line {lineno}: bad score {fields[1]!r}") from exc
        entries.append(ScoreEntry(fields[0], score, p.label, p.attacker_distance, p.speaker_quality))
    return ScoreSet(system_id, entries)


def _check_classes(bona, spoof):
    if bona.size == 0 or spoof.size == 0:
        raise InputError("need at least one bona-fide and one spoof score")


def error_curves(bona, spoof):
    """Miss/false-alarm rates at every distinct score plus a threshold above all scores.

    Returns (thresholds, p_miss, p_fa), thresholds ascending.
    """
    bona = np.sort(np.asarray(bona, dtype=np.float64))
    spoof = np.sort(np.asarray(spoof, dtype=np.float64))
    uniq = np.unique(np.concatenate([bona, spoof]))
    thr = np.append(uniq, np.nextafter(uniq[-1], np.inf))
    p_miss = np.searchsorted(bona, thr, side="left") / bona.size
    p_fa = (spoof.size - np.searchsorted(spoof, thr, side="left")) / spoof.size
    return thr, p_miss, p_fa


def eer_from_curves(thr, p_miss, p_fa):
    """Interpolated crossing of the miss and false-alarm curves."""
    diff = p_miss - p_fa
    i = int(np.argmax(diff >= 0))
    if diff[i] == 0 or i == 0:
        return float(p_miss[i]), float(thr[i])
    d0, d1 = diff[i - 1], diff[i]
    frac = d0 / (d0 - d1)
    eer = p_miss[i - 1] + frac * (p_miss[i] - p_miss[i - 1])
    return float(eer), float(thr[i - 1] + frac * (thr[i] - thr[i - 1]))


def compute_eer(scores):
    """Return ``(eer, threshold)`` for a ScoreSet or a ``(bona, spoof)`` pair."""
    bona, spoof = scores.split() if isinstance(scores, ScoreSet) else map(np.asarray, scores)
    _check_classes(bona, spoof)
    return eer_from_curves(*error_curves(bona, spoof))


@dataclass(frozen=True)
class TdcfParams:
    """Tandem cost model with a fixed ASV operating point.

    Priors and costs default to the ASVspoof 2019 evaluation plan. The ASV
    error rates stand in for the challenge's ASV system, which is not shipped.
    """

    p_tar: float = 0.9405
    p_non: float = 0.0095
    p_spoof: float = 0.05
    c_miss_asv: float = 1.0
    c_fa_asv: float = 10.0
    c_miss_cm: float = 1.0
    c_fa_cm: float = 10.0
    p_miss_asv: float = 0.0250
    p_fa_asv: float = 0.0250
    p_miss_spoof_asv: float = 0.40

    def validate(self):
        priors = (self.p_tar, self.p_non, self.p_spoof)
        if min(priors) < 0 or abs(sum(priors) - 1) > 1e-9:
            raise ConfigError("t-DCF priors must be non-negative and sum to 1")
        if min(self.c_miss_asv, self.c_fa_asv, self.c_miss_cm, self.c_fa_cm) <= 0:
            raise ConfigError("t-DCF costs must be positive")
        for p in (self.p_miss_asv, self.p_fa_asv, self.p_miss_spoof_asv):
            if not 0 <= p <= 1:
                raise ConfigError("ASV error rates must lie in [0, 1]")
        return self

    def coefficients(self):
        c1 = self.p_tar * (self.c_miss_cm - self.c_miss_asv * self.p_miss_asv) - self.p_non * self.c_fa_asv * self.p_fa_asv
        c2 = self.c_fa_cm * self.p_spoof * (1 - self.p_miss_spoof_asv)
        return c1, c2

    @classmethod
    def from_dict(cls, d):
        return cls(**d).validate()


def compute_min_tdcf(scores, params=None):
    params = (params or TdcfParams()).validate()
    bona, spoof = scores.split() if isinstance(scores, ScoreSet) else map(np.asarray, scores)
    _check_classes(bona, spoof)
    c1, c2 = params.coefficients()
    norm = min(c1, c2)
    if norm <= 0:
        raise ConfigError(f"t-DCF normalizer min(C1, C2) = {norm} is not positive")
    _, p_miss, p_fa = error_curves(bona, spoof)
    return float(((c1 * p_miss + c2 * p_fa) / norm).min())


def det_points(scores):
    """(threshold, p_miss, p_fa) rows for external DET plotting."""
    bona, spoof = scores.split()
    _check_classes(bona, spoof)
    return np.column_stack(error_curves(bona, spoof))


# fusion -------------------------------------------------------------------------

def fuse_scores(sets, znorm=False):
    """Unweighted per-utterance sum of member scores (optionally z-normalized first)."""
    if not sets:
        raise InputError("nothing to fuse")
    ref = sets[0]
    ref_ids = set(ref.ids())
    for s in sets[1:]:
        other = set(s.ids())
        if other != ref_ids:
            sym = sorted(ref_ids ^ other)
            raise InputError(f"utterance sets differ between {ref.system_id} and {s.system_id}: {sym[:10]}")
    total = {e.utterance_id: 0.0 for e in ref.entries}
    for s in sets:
        vals = np.array([e.score for e in s.entries])
        mu, sd = (vals.mean(), vals.std() or 1.0) if znorm else (0.0, 1.0)
        for e in s.entries:
            total[e.utterance_id] += (e.score - mu) / sd
    entries = [ScoreEntry(e.utterance_id, total[e.utterance_id], e.label, e.attacker_distance, e.speaker_quality)
               for e in ref.entries]
    return ScoreSet("+".join(s.system_id for s in sets), entries)


# reports ------------------------------------------------------------------------

@dataclass
class CellMetrics:
    eer: float
    min_tdcf: float
    n_bonafide: int
    n_spoof: int


@dataclass
class MetricsReport:
    system_id: str
    pooled: CellMetrics
    cells: dict = field(default_factory=dict)  # cell label -> CellMetrics or None

    def to_dict(self):
        return {
            "system_id": self.system_id,
            "pooled": asdict(self.pooled),
            "cells": {k: (asdict(v) if v is not None else None) for k, v in self.cells.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self):
        """Two-row table in the per-configuration layout: t-DCF and EER(%)."""
        cols = ["Pooled", *CELLS]
        vals = [self.pooled, *(self.cells.get(c) for c in CELLS)]
        head = f"{'Metric':<8}" + "".join(f"{c:>9}" for c in cols)
        tdcf = f"{'t-DCF':<8}" + "".join(f"{v.min_tdcf:>9.4f}" if v else f"{'-':>9}" for v in vals)
        eer = f"{'EER(%)':<8}" + "".join(f"{100 * v.eer:>9.2f}" if v else f"{'-':>9}" for v in vals)
        return f"{self.system_id}\n{head}\n{tdcf}\n{eer}\n"


def _cell(bona, spoof, params):
    return CellMetrics(compute_eer((bona, spoof))[0], compute_min_tdcf((bona, spoof), params), bona.size, spoof.size)


def breakdown_report(scores, params=None):
    """Pooled metrics plus the 3x3 distance/quality grid.

    Each cell pairs every bona-fide trial with the spoofs tagged for that cell;
    cells without spoofs are reported as None.
    """
    params = params or TdcfParams()
    bona, spoof = scores.split()
    report = MetricsReport(scores.system_id, _cell(bona, spoof, params))
    for cell in CELLS:
        sel = np.array([e.score for e in scores.entries if e.label == SPOOF and e.config == cell])
        report.cells[cell] = _cell(bona, sel, params) if sel.size else None
    return report


def summary_table(reports):
    """Multi-system t-DCF / EER summary, one row per system."""
    width = max([6] + [len(r.system_id) for r in reports])
    lines = [f"{'System':<{width}}  {'t-DCF':>8}  {'EER(%)':>7}"]
    for r in reports:
        lines.append(f"{r.system_id:<{width}}  {r.pooled.min_tdcf:>8.4f}  {100 * r.pooled.eer:>7.2f}")
    return "\n".join(lines) + "\n"
