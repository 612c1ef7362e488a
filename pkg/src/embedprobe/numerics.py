"""Shared numerical kernels: SPD solves, stable reductions, seeded streams, gradient checks."""

from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np
from scipy.linalg import lapack


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    def __init__(self, pivot: int):
        super().__init__(f"matrix is not positive definite (failing pivot index {pivot})")
        self.pivot = pivot


class NumericError(RuntimeError):
    """Non-finite values or divergence inside a numerical routine."""


def cholesky(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericError("non-finite entry in matrix")
    L, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return L


def cho_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    x, info = lapack.dpotrs(L, np.asarray(b, dtype=np.float64), lower=1)
    if info != 0:
        raise ValueError(f"dpotrs: illegal argument {-info}")
    return x


def solve_spd(A: np.ndarray, b: np.ndarray, sym_tol: float = 1e-9) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive-definite ``A`` via Cholesky.

    ``b`` may be a vector or a matrix of right-hand sides. Raises
    :class:`NotPositiveDefiniteError` carrying the index of the failing pivot.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, b is {b.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if np.max(np.abs(A - A.T), initial=0.0) > sym_tol * scale:
        raise ValueError("matrix is not symmetric")
    return cho_solve(cholesky(A), b)


def spd_inverse(A: np.ndarray) -> np.ndarray:
    L = cholesky(A)
    inv = cho_solve(L, np.eye(A.shape[0]))
    return 0.5 * (inv + inv.T)


def logdet_spd(A: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(cholesky(A)))))


def logsumexp(v: np.ndarray, axis: int | None = None) -> np.ndarray | float:
    """Max-shifted ``log(sum(exp(v)))``; reduces over ``axis`` (all entries when None)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("logsumexp of an empty array")
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def grad_check(
    f: Callable[[np.ndarray], float],
    theta: np.ndarray,
    grad: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Max relative error between ``grad`` and central differences of ``f`` at ``theta``.

    The error per coordinate is ``|fd_i - g_i| / max(1, |g_i|)``.
    """
    theta = np.array(theta, dtype=np.float64).ravel()
    grad = np.asarray(grad, dtype=np.float64).ravel()
    if grad.shape != theta.shape:
        raise ValueError("gradient and parameter shapes differ")
    worst = 0.0
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        fp = f(theta)
        theta[i] = old - h
        fm = f(theta)
        theta[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite objective at coordinate {i}")
        fd = (fp - fm) / (2.0 * h)
        worst = max(worst, abs(fd - grad[i]) / max(1.0, abs(grad[i])))
    return worst


def _name_key(name: str) -> list[int]:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=16).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


class Rng:
    """Seeded random stream with independent named substreams.

    ``Rng(42).child("ubm")`` always yields the same generator regardless of
    what other substreams were drawn before, so each pipeline step is
    reproducible on its own.
    """

    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)
        self.path = tuple(path)
        key: list[int] = []
        for part in self.path:
            key.extend(_name_key(part))
        self.gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=key)))

    def child(self, name: str) -> "Rng":
        parts = tuple(p for p in name.split("/") if p)
        return Rng(self.seed, self.path + parts)

    @property
    def name(self) -> str:
        return "/".join(self.path)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.name!r})"

    # thin passthroughs used throughout the package
    def normal(self, *args, **kwargs):
        return self.gen.normal(*args, **kwargs)

    def uniform(self, *args, **kwargs):
        return self.gen.uniform(*args, **kwargs)

    def integers(self, *args, **kwargs):
        return self.gen.integers(*args, **kwargs)

    def permutation(self, x):
        return self.gen.permutation(x)

    def choice(self, *args, **kwargs):
        return self.gen.choice(*args, **kwargs)

    def random(self, *args, **kwargs):
        return self.gen.random(*args, **kwargs)
