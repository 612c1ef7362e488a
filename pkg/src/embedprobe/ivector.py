"""Total-variability training and i-vector extraction (``M = m + T w``).

The i-vector is the posterior mean of ``w`` given an utterance's Baum-Welch
statistics. For zero-order counts ``N_c`` and centered first-order stats
``F_c`` the posterior is Gaussian with precision
``L = I + sum_c N_c T_c' S_c^-1 T_c`` and mean ``L^-1 T' S^-1 F``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gmm import GmmUbm, SuffStats
from .numerics import NotPositiveDefiniteError, NumericError, Rng, cho_solve, cholesky, solve_spd

log = logging.getLogger(__name__)


@dataclass
class IVector:
    utt_id: str
    w: np.ndarray


@dataclass
class TvModel:
    T: np.ndarray  # (C*D, R)
    ubm: GmmUbm
    train_objective: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=np.float64)
        C, D = self.ubm.means.shape
        if self.T.ndim != 2 or self.T.shape[0] != C * D:
            raise ValueError(f"T must have {C * D} rows, got shape {self.T.shape}")
        if not 1 <= self.T.shape[1] <= C * D:
            raise ValueError("rank must satisfy 1 <= R <= C*D")
        if not np.all(np.isfinite(self.T)):
            raise NumericError("non-finite entries in total variability matrix")
        self._cache = None

    @property
    def rank(self) -> int:
        return self.T.shape[1]

    def _terms(self):
        if self._cache is None:
            C, D = self.ubm.means.shape
            Tc = self.T.reshape(C, D, self.rank)
            SiT = Tc / self.ubm.variances[:, :, None]
            TtSiT = np.einsum("cdr,cds->crs", Tc, SiT)
            self._cache = (SiT.reshape(C * D, self.rank), TtSiT)
        return self._cache

    def precision(self, N: np.ndarray) -> np.ndarray:
        _, TtSiT = self._terms()
        L = np.tensordot(np.asarray(N, dtype=np.float64), TtSiT, axes=1)
        L[np.diag_indices(self.rank)] += 1.0
        return 0.5 * (L + L.T)

    def projection(self, F: np.ndarray) -> np.ndarray:
        SiT, _ = self._terms()
        return SiT.T @ np.asarray(F, dtype=np.float64).reshape(-1)

    def posterior(self, stats: SuffStats) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Posterior mean, Cholesky factor of the precision, and the projected stats."""
        C, D = self.ubm.means.shape
        if stats.N.shape != (C,) or stats.F.shape != (C, D):
            raise ValueError(f"stats shapes {stats.N.shape}/{stats.F.shape} do not match model ({C}, {D})")
        L = self.precision(stats.N)
        b = self.projection(stats.F)
        try:
            chol = cholesky(L)
        except NotPositiveDefiniteError as exc:
            raise NumericError(f"{stats.utt_id}: posterior precision not positive definite ({exc})") from exc
        return cho_solve(chol, b), chol, b


def extract_ivector(tv: TvModel, stats: SuffStats) -> IVector:
    w, _, _ = tv.posterior(stats)
    return IVector(stats.utt_id, w)


def extract_ivectors(tv: TvModel, stats: Sequence[SuffStats]) -> np.ndarray:
    return np.stack([extract_ivector(tv, s).w for s in stats]) if stats else np.zeros((0, tv.rank))


def _marginal_objective(w: np.ndarray, chol: np.ndarray, b: np.ndarray) -> float:
    # ln p(F | N, T) up to T-independent terms: 0.5 b'L^-1 b - 0.5 ln|L|
    return 0.5 * float(b @ w) - float(np.sum(np.log(np.diag(chol))))


def train_tv(
    ubm: GmmUbm,
    stats: Sequence[SuffStats],
    R: int,
    iters: int,
    rng: Rng,
    chunk: int = 256,
) -> TvModel:
    """Plain EM for the total-variability matrix.

    ``tv.train_objective`` records the marginal log-likelihood of the statistics
    (T-dependent part) before every update and after the last one.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    if len(stats) < R:
        raise ValueError(f"need at least R={R} utterances, got {len(stats)}")
    C, D = ubm.means.shape
    avg_sigma = float(np.mean(np.sqrt(ubm.variances)))
    tv = TvModel(rng.normal(size=(C * D, R)) * 0.1 * avg_sigma, ubm)

    Fall = np.stack([s.F.reshape(-1) for s in stats])  # (U, C*D)
    Nall = np.stack([s.N for s in stats])  # (U, C)

    for it in range(iters + 1):
        A = np.zeros((C, R * R))
        Cacc = np.zeros((C * D, R))
        objective = 0.0
        for start in range(0, len(stats), chunk):
            ws = []
            eww = []
            for s in stats[start : start + chunk]:
                w, chol, b = tv.posterior(s)
                objective += _marginal_objective(w, chol, b)
                if it < iters:
                    Linv = cho_solve(chol, np.eye(R))
                    ws.append(w)
                    eww.append((Linv + np.outer(w, w)).reshape(-1))
            if it < iters:
                W = np.stack(ws)
                A += Nall[start : start + chunk].T @ np.stack(eww)
                Cacc += Fall[start : start + chunk].T @ W
        tv.train_objective.append(objective)
        log.info("TV EM iter %d: objective %.6g", it, objective)
        if it == iters:
            break
        T_new = np.empty((C, D, R))
        Cc = Cacc.reshape(C, D, R)
        for c in range(C):
            Ac = A[c].reshape(R, R)
            try:
                T_new[c] = solve_spd(0.5 * (Ac + Ac.T), Cc[c].T).T
            except NotPositiveDefiniteError as exc:
                raise NumericError(
                    f"singular TV accumulator for component {c} (too few effective utterances for R={R}): {exc}"
                ) from exc
        tv = TvModel(T_new.reshape(C * D, R), ubm, tv.train_objective)
    return tv
