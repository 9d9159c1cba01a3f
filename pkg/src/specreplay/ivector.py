"""GMM-UBM, Baum-Welch statistics, total-variability training and i-vectors."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .errors import InputError

log = logging.getLogger(__name__)

VAR_FLOOR_RATIO = 1e-4


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik_history: list = field(default_factory=list)

    @property
    def n_components(self):
        return self.weights.size

    @property
    def dim(self):
        return self.means.shape[1]

    def component_loglik(self, x):
        """log w_c + log N(x_t; mu_c, diag(var_c)), shape (T, C)."""
        prec = 1.0 / self.variances
        quad = (x * x) @ prec.T - 2.0 * x @ (self.means * prec).T + (self.means ** 2 * prec).sum(axis=1)
        logdet = np.log(self.variances).sum(axis=1)
        return np.log(self.weights) - 0.5 * (self.dim * np.log(2 * np.pi) + logdet + quad)

    def posteriors(self, x):
        ll = self.component_loglik(x)
        norm = logsumexp(ll, axis=1, keepdims=True)
        return np.exp(ll - norm), float(norm.sum())

    def log_likelihood(self, x):
        return float(logsumexp(self.component_loglik(x), axis=1).sum())


def _kmeans_pp(x, k, rng):
    centers = [x[rng.integers(x.shape[0])]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(x.shape[0], p=d2 / total) if total > 0 else rng.integers(x.shape[0])
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _assign(x, centers):
    d = (x * x).sum(1)[:, None] - 2 * x @ centers.T + (centers * centers).sum(1)
    return d.argmin(axis=1)


def train_ubm(features, n_components=32, n_iters=20, rng=None, kmeans_iters=5):
    """Diagonal-covariance GMM by k-means++ seeding followed by EM.

    ``loglik_history[i]`` is the total log-likelihood after ``i`` M-steps.
    Components that lose all occupancy are re-seeded by splitting the most
    occupied component.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InputError("train_ubm needs a non-empty (frames, dim) array")
    rng = rng if rng is not None else np.random.default_rng(0)
    n, dim = x.shape
    c = n_components
    if n < c:
        raise InputError(f"{n} frames cannot support {c} components")
    floor = VAR_FLOOR_RATIO * x.var(axis=0)

    if c == 1:
        gmm = GmmModel(np.ones(1), x.mean(axis=0, keepdims=True), np.maximum(x.var(axis=0, keepdims=True), floor))
    else:
        centers = _kmeans_pp(x, c, rng)
        for _ in range(kmeans_iters):
            lab = _assign(x, centers)
            for k in range(c):
                if np.any(lab == k):
                    centers[k] = x[lab == k].mean(axis=0)
        lab = _assign(x, centers)
        counts = np.bincount(lab, minlength=c).astype(np.float64)
        variances = np.empty((c, dim))
        for k in range(c):
            members = x[lab == k]
            variances[k] = members.var(axis=0) if members.shape[0] > 1 else x.var(axis=0)
        weights = np.maximum(counts, 1.0)
        gmm = GmmModel(weights / weights.sum(), centers, np.maximum(variances, floor))

    for _ in range(n_iters):
        gamma, total = gmm.posteriors(x)
        gmm.loglik_history.append(total)
        occ = gamma.sum(axis=0)
        dead = occ < 1e-10
        occ_safe = np.where(dead, 1.0, occ)
        means = (gamma.T @ x) / occ_safe[:, None]
        variances = np.maximum((gamma.T @ (x * x)) / occ_safe[:, None] - means ** 2, floor)
        weights = occ / n
        for k in np.flatnonzero(dead):
            donor = int(np.argmax(weights))
            log.warning("UBM component %d empty; re-seeding from component %d", k, donor)
            jitter = 0.1 * np.sqrt(variances[donor]) * rng.standard_normal(dim)
            means[k] = means[donor] + jitter
            variances[k] = variances[donor]
            weights[donor] /= 2
            weights[k] = weights[donor]
        gmm = GmmModel(weights / weights.sum(), means, variances, gmm.loglik_history)
    gmm.loglik_history.append(gmm.log_likelihood(x))
    return gmm


@dataclass
class BwStats:
    """Zeroth-order counts and UBM-mean-centered first-order statistics."""

    n: np.ndarray
    f: np.ndarray
    n_frames: int

    @property
    def empty(self):
        return self.n_frames == 0


def accumulate_stats(features, ubm):
    x = np.asarray(features, dtype=np.float64).reshape(-1, ubm.dim)
    if x.shape[0] == 0:
        return BwStats(np.zeros(ubm.n_components), np.zeros_like(ubm.means), 0)
    gamma, _ = ubm.posteriors(x)
    n = gamma.sum(axis=0)
    f = gamma.T @ x - n[:, None] * ubm.means
    return BwStats(n, f, x.shape[0])


@dataclass
class TVMatrix:
    """Total-variability matrix stored per component, shape (C, dim, R)."""

    t: np.ndarray
    objective_history: list = field(default_factory=list)

    @property
    def rank(self):
        return self.t.shape[2]

    @property
    def matrix(self):
        """(C * dim, R) supervector layout."""
        c, d, r = self.t.shape
        return self.t.reshape(c * d, r)


def _whiten(tv, ubm):
    return tv.t / np.sqrt(ubm.variances)[:, :, None]


def _posterior(st, tw, tt, r):
    """Precision L, linear term b, posterior mean w and Cholesky factor."""
    prec = np.eye(r) + np.einsum("c,cij->ij", st.n, tt)
    b = np.einsum("cdr,cd->r", tw, st.f_white)
    cf = cho_factor(prec)
    return prec, b, cho_solve(cf, b), cf


class _WStats:
    __slots__ = ("n", "f_white")

    def __init__(self, stats, ubm):
        self.n = stats.n
        self.f_white = stats.f / np.sqrt(ubm.variances)


def _objective_term(b, w, cf):
    logdet = 2.0 * np.log(np.diag(cf[0])).sum()
    return 0.5 * float(b @ w) - 0.5 * logdet


def tv_objective(stats_list, ubm, tv):
    """Marginal log-likelihood of the statistics under the factor model, up to constants."""
    tw = _whiten(tv, ubm)
    tt = np.einsum("cdi,cdj->cij", tw, tw)
    total = 0.0
    for st in stats_list:
        _, b, w, cf = _posterior(_WStats(st, ubm), tw, tt, tv.rank)
        total += _objective_term(b, w, cf)
    return total


def train_tv(stats_list, ubm, rank=50, n_iters=10, rng=None, init_scale=0.1):
    """EM for M = m + T w, w ~ N(0, I), with alignments fixed by the UBM."""
    if not stats_list:
        raise InputError("train_tv needs at least one utterance")
    rng = rng if rng is not None else np.random.default_rng(0)
    c, d = ubm.means.shape
    t = init_scale * rng.standard_normal((c, d, rank)) * np.sqrt(ubm.variances)[:, :, None]
    tv = TVMatrix(t)
    wstats = [_WStats(st, ubm) for st in stats_list]
    for _ in range(n_iters):
        tw = _whiten(tv, ubm)
        tt = np.einsum("cdi,cdj->cij", tw, tw)
        acc_a = np.zeros((c, rank, rank))
        acc_c = np.zeros((c, d, rank))
        total = 0.0
        for st in wstats:
            _, b, w, cf = _posterior(st, tw, tt, rank)
            total += _objective_term(b, w, cf)
            second = cho_solve(cf, np.eye(rank)) + np.outer(w, w)
            acc_a += st.n[:, None, None] * second
            acc_c += st.f_white[:, :, None] * w[None, None, :]
        tv.objective_history.append(total)
        new = np.empty_like(tw)
        for k in range(c):
            a = acc_a[k]
            try:
                new[k] = np.linalg.solve(a.T, acc_c[k].T).T
                if not np.all(np.isfinite(new[k])):
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                warnings.warn(f"singular TV normal equations for component {k}; adding ridge 1e-6", RuntimeWarning)
                new[k] = np.linalg.solve((a + 1e-6 * np.eye(rank)).T, acc_c[k].T).T
        tv = TVMatrix(new * np.sqrt(ubm.variances)[:, :, None], tv.objective_history)
    tv.objective_history.append(tv_objective(stats_list, ubm, tv))
    return tv


def extract_ivector(stats, tv, ubm):
    """Posterior mean ``(I + T' S^-1 N T)^-1 T' S^-1 F``; no LDA, no length normalization."""
    if stats.empty or not np.any(stats.n):
        return np.zeros(tv.rank)
    tw = _whiten(tv, ubm)
    tt = np.einsum("cdi,cdj->cij", tw, tw)
    _, _, w, _ = _posterior(_WStats(stats, ubm), tw, tt, tv.rank)
    return w


@dataclass
class IvectorExtractor:
    ubm: GmmModel
    tv: TVMatrix

    @classmethod
    def fit(cls, feature_list, n_components=32, rank=50, ubm_iters=10, tv_iters=5, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        ubm = train_ubm(np.vstack(feature_list), n_components, ubm_iters, rng)
        stats = [accumulate_stats(f, ubm) for f in feature_list]
        return cls(ubm, train_tv(stats, ubm, rank, tv_iters, rng))

    def transform(self, features):
        return extract_ivector(accumulate_stats(features, self.ubm), self.tv, self.ubm)

    def arrays(self):
        return {
            "ubm.weights": self.ubm.weights,
            "ubm.means": self.ubm.means,
            "ubm.variances": self.ubm.variances,
            "tv.t": self.tv.t,
        }

    @classmethod
    def from_arrays(cls, arrays):
        ubm = GmmModel(np.asarray(arrays["ubm.weights"], np.float64), np.asarray(arrays["ubm.means"], np.float64),
                       np.asarray(arrays["ubm.variances"], np.float64))
        return cls(ubm, TVMatrix(np.asarray(arrays["tv.t"], np.float64)))
