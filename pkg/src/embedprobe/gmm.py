"""Diagonal-covariance GMM-UBM training and Baum-Welch statistics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import FeatureMatrix
from .numerics import NumericError, Rng, logsumexp

log = logging.getLogger(__name__)

VAR_FLOOR_FRACTION = 1e-4
STARVATION_FRACTION = 1e-3
_CHUNK = 32768


@dataclass
class GmmUbm:
    weights: np.ndarray  # (C,)
    means: np.ndarray  # (C, D)
    variances: np.ndarray  # (C, D)
    var_floor: np.ndarray | None = None  # (D,)
    train_llh: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if self.means.shape != self.variances.shape or self.weights.shape != (self.means.shape[0],):
            raise ValueError("inconsistent GMM parameter shapes")
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError(f"mixture weights sum to {self.weights.sum()!r}")
        if np.any(self.variances <= 0):
            raise ValueError("non-positive variance")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _precompute(self):
        inv = 1.0 / self.variances
        const = np.log(self.weights) - 0.5 * (
            self.dim * np.log(2 * np.pi) + np.sum(np.log(self.variances), axis=1) + np.sum(self.means**2 * inv, axis=1)
        )
        return inv, self.means * inv, const

    def log_joint(self, X: np.ndarray) -> np.ndarray:
        """``log w_c + log N(x_t; mu_c, var_c)`` for each frame and component, shape (T, C)."""
        X = np.asarray(X, dtype=np.float64)
        inv, mu_inv, const = self._precompute()
        return const[None, :] - 0.5 * ((X * X) @ inv.T) + X @ mu_inv.T

    def posteriors(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Frame responsibilities (T, C) and per-frame log-likelihoods (T,)."""
        lj = self.log_joint(X)
        ll = logsumexp(lj, axis=1)
        return np.exp(lj - ll[:, None]), ll

    def log_likelihood(self, X: np.ndarray) -> float:
        total = 0.0
        for start in range(0, len(X), _CHUNK):
            total += float(np.sum(self.posteriors(X[start : start + _CHUNK])[1]))
        return total

    def supervector(self) -> np.ndarray:
        return self.means.reshape(-1)


@dataclass
class SuffStats:
    utt_id: str
    N: np.ndarray  # (C,) zero-order
    F: np.ndarray  # (C, D) centered first-order

    def __add__(self, other: "SuffStats") -> "SuffStats":
        return SuffStats(f"{self.utt_id}+{other.utt_id}", self.N + other.N, self.F + other.F)

    def scaled(self, alpha: float) -> "SuffStats":
        return SuffStats(self.utt_id, alpha * self.N, alpha * self.F)


def responsibilities(ubm: GmmUbm, frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (ubm.dim,):
        raise ValueError(f"frame has shape {frame.shape}, expected ({ubm.dim},)")
    return ubm.posteriors(frame[None, :])[0][0]


def accumulate_stats(ubm: GmmUbm, f: FeatureMatrix | np.ndarray, utt_id: str | None = None) -> SuffStats:
    X = np.asarray(f.frames if isinstance(f, FeatureMatrix) else f, dtype=np.float64)
    if X.shape[1] != ubm.dim:
        raise ValueError(f"feature dim {X.shape[1]} != UBM dim {ubm.dim}")
    gamma, _ = ubm.posteriors(X)
    N = gamma.sum(axis=0)
    F = gamma.T @ X - N[:, None] * ubm.means
    uid = utt_id if utt_id is not None else (f.utt_id if isinstance(f, FeatureMatrix) else "")
    return SuffStats(uid, N, F)


def _kmeans_pp(X: np.ndarray, C: int, rng: Rng) -> np.ndarray:
    n = len(X)
    centers = np.empty((C, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for c in range(1, C):
        total = d2.sum()
        if total <= 0:
            centers[c] = X[rng.integers(n)]
        else:
            centers[c] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - centers[c]) ** 2, axis=1))
    return centers


def _assign(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    sq = np.sum(centers**2, axis=1)
    out = np.empty(len(X), dtype=np.int64)
    for start in range(0, len(X), _CHUNK):
        chunk = X[start : start + _CHUNK]
        out[start : start + _CHUNK] = np.argmin(sq[None, :] - 2.0 * chunk @ centers.T, axis=1)
    return out


def _kmeans(X: np.ndarray, C: int, rng: Rng, iters: int = 10) -> tuple[np.ndarray, np.ndarray]:
    centers = _kmeans_pp(X, C, rng)
    for _ in range(iters):
        labels = _assign(X, centers)
        for c in range(C):
            members = X[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return centers, _assign(X, centers)


def train_ubm(
    features: Sequence[FeatureMatrix] | np.ndarray,
    C: int,
    iters: int,
    rng: Rng,
    kmeans_frames: int = 50000,
) -> GmmUbm:
    """k-means++ / Lloyd initialisation followed by ``iters`` EM iterations.

    The data log-likelihood after each iteration is kept in ``ubm.train_llh``
    (entry 0 is the initial model).
    """
    if C < 1:
        raise ValueError("C must be >= 1")
    if isinstance(features, np.ndarray):
        X = np.asarray(features, dtype=np.float64)
    else:
        if not features:
            raise ValueError("no training data")
        X = np.concatenate([np.asarray(f.frames, dtype=np.float64) for f in features], axis=0)
    if X.size == 0:
        raise ValueError("no training data")
    T, D = X.shape
    if T < 10 * C:
        raise ValueError(f"need at least {10 * C} frames for {C} components, got {T}")

    global_mean = X.mean(axis=0)
    global_var = X.var(axis=0)
    floor = np.maximum(VAR_FLOOR_FRACTION * global_var, 1e-12)

    init_rng = rng.child("init")
    sub = X if T <= kmeans_frames else X[np.sort(init_rng.choice(T, size=kmeans_frames, replace=False))]
    centers, labels = _kmeans(sub, C, init_rng)
    counts = np.bincount(labels, minlength=C).astype(np.float64)
    variances = np.tile(global_var, (C, 1))
    for c in range(C):
        if counts[c] > 1:
            variances[c] = sub[labels == c].var(axis=0)
    counts = np.maximum(counts, 1.0)
    ubm = GmmUbm(counts / counts.sum(), centers, np.maximum(variances, floor), floor)

    reset_rng = rng.child("reset")
    for it in range(iters + 1):
        # the E-step pass also yields the log-likelihood of the current model
        N = np.zeros(C)
        S1 = np.zeros((C, D))
        S2 = np.zeros((C, D))
        llh = 0.0
        for start in range(0, T, _CHUNK):
            chunk = X[start : start + _CHUNK]
            gamma, ll = ubm.posteriors(chunk)
            llh += float(ll.sum())
            if it < iters:
                N += gamma.sum(axis=0)
                S1 += gamma.T @ chunk
                S2 += gamma.T @ (chunk * chunk)
        if not np.isfinite(llh):
            raise NumericError(f"non-finite log-likelihood at EM iteration {it}")
        ubm.train_llh.append(llh)
        log.info("UBM EM iter %d: avg llh %.5f", it, llh / T)
        if it == iters:
            break
        starved = N < STARVATION_FRACTION * T / C
        safe = np.maximum(N, 1e-300)[:, None]
        means = S1 / safe
        variances = np.maximum(S2 / safe - means**2, floor)
        weights = N / N.sum()
        for c in np.flatnonzero(starved):
            log.warning("EM iteration %d: component %d starved (N=%.3g); resetting", it, c, N[c])
            means[c] = global_mean + 0.1 * np.sqrt(global_var) * reset_rng.normal(size=D)
            variances[c] = global_var
            weights[c] = 1.0 / C
        weights = weights / weights.sum()
        ubm = GmmUbm(weights, means, variances, floor, ubm.train_llh)
    return ubm
