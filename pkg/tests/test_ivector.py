import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embedprobe.gmm import GmmUbm, SuffStats, accumulate_stats
from embedprobe.ivector import TvModel, extract_ivector, extract_ivectors, train_tv
from embedprobe.numerics import Rng


def toy_model(seed=0, C=2, D=3, R=2, scale=1.0):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.5, 1.5, size=C)
    ubm = GmmUbm(w / w.sum(), rng.normal(size=(C, D)), rng.uniform(0.5, 2.0, size=(C, D)))
    return TvModel(scale * rng.normal(size=(C * D, R)), ubm), rng


def frame_log_posterior(tv, X, w):
    # log N(w; 0, I) + sum_t sum_c gamma_tc log N(x_t; mu_c + T_c w, Sigma_c), up to constants
    ubm = tv.ubm
    C, D = ubm.means.shape
    gamma, _ = ubm.posteriors(X)
    Tc = tv.T.reshape(C, D, -1)
    total = -0.5 * float(w @ w)
    for c in range(C):
        mean = ubm.means[c] + Tc[c] @ w
        resid = X - mean
        total += float(np.sum(gamma[:, c] * (-0.5 * np.sum(resid**2 / ubm.variances[c], axis=1))))
    return total


def grid_argmax(f, center, half_width=6.0, points=41, rounds=14, shrink=4.0):
    best = np.asarray(center, dtype=float)
    for _ in range(rounds):
        axis = np.linspace(-half_width, half_width, points)
        cands = [best + np.array([a, b]) for a in axis for b in axis]
        vals = [f(c) for c in cands]
        best = cands[int(np.argmax(vals))]
        half_width /= shrink
    return best


def test_extraction_matches_brute_force_map():
    tv, rng = toy_model(seed=11)
    X = rng.normal(size=(40, 3)) + tv.ubm.means[0]
    w = extract_ivector(tv, accumulate_stats(tv.ubm, X)).w
    oracle = grid_argmax(lambda v: frame_log_posterior(tv, X, v), np.zeros(2))
    np.testing.assert_allclose(w, oracle, atol=1e-6)


def test_zero_first_order_gives_zero():
    tv, _ = toy_model()
    s = SuffStats("z", np.array([5.0, 3.0]), np.zeros((2, 3)))
    np.testing.assert_array_equal(extract_ivector(tv, s).w, np.zeros(2))


def test_zero_subspace_gives_identity_precision():
    tv, rng = toy_model()
    tv0 = TvModel(np.zeros_like(tv.T), tv.ubm)
    s = SuffStats("s", np.array([4.0, 2.0]), rng.normal(size=(2, 3)))
    np.testing.assert_array_equal(tv0.precision(s.N), np.eye(2))
    np.testing.assert_array_equal(extract_ivector(tv0, s).w, np.zeros(2))


def test_precision_formula():
    tv, rng = toy_model(seed=3)
    N = np.array([2.5, 7.0])
    C, D = 2, 3
    Tc = tv.T.reshape(C, D, 2)
    L = np.eye(2) + sum(N[c] * Tc[c].T @ np.diag(1 / tv.ubm.variances[c]) @ Tc[c] for c in range(C))
    np.testing.assert_allclose(tv.precision(N), L, rtol=1e-12)


@settings(deadline=None, max_examples=40)
@given(seed=st.integers(0, 10_000), alpha=st.floats(0.05, 0.95))
def test_shrinkage_with_less_data(seed, alpha):
    tv, rng = toy_model(seed=seed)
    s = SuffStats("s", rng.uniform(1, 20, size=2), rng.normal(size=(2, 3)) * 3)
    full = np.linalg.norm(extract_ivector(tv, s).w)
    assert np.linalg.norm(extract_ivector(tv, s.scaled(alpha)).w) < full


@settings(deadline=None, max_examples=40)
@given(seed=st.integers(0, 10_000), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_linearity_in_first_order_stats(seed, a, b):
    tv, rng = toy_model(seed=seed)
    N = rng.uniform(1, 20, size=2)
    F1, F2 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    w = lambda F: extract_ivector(tv, SuffStats("s", N, F)).w
    np.testing.assert_allclose(w(a * F1 + b * F2), a * w(F1) + b * w(F2), atol=1e-8)


def principal_angles_deg(A, B):
    Qa, _ = np.linalg.qr(A)
    Qb, _ = np.linalg.qr(B)
    s = np.clip(np.linalg.svd(Qa.T @ Qb, compute_uv=False), -1, 1)
    return np.degrees(np.arccos(s))


def planted_stats(seed=0, C=4, D=3, U=400):
    rng = np.random.default_rng(seed)
    ubm = GmmUbm(np.full(C, 1 / C), rng.normal(size=(C, D)), np.ones((C, D)))
    T_star = rng.normal(size=(C * D, 2))
    stats = []
    for u in range(U):
        N = rng.uniform(5, 30, size=C)
        w = rng.normal(size=2)
        mean = (T_star @ w).reshape(C, D)
        noise = 0.1 * np.sqrt(N)[:, None] * rng.normal(size=(C, D))
        stats.append(SuffStats(f"u{u}", N, N[:, None] * mean + noise))
    return ubm, T_star, stats


def test_planted_subspace_recovered():
    ubm, T_star, stats = planted_stats()
    tv = train_tv(ubm, stats, 2, 10, Rng(5))
    assert np.max(principal_angles_deg(tv.T, T_star)) < 5.0


def test_objective_non_decreasing_and_deterministic():
    ubm, _, stats = planted_stats(seed=1, U=120)
    tv = train_tv(ubm, stats, 3, 6, Rng(2))
    obj = np.array(tv.train_objective)
    assert len(obj) == 7
    assert np.all(np.diff(obj) >= -1e-6 * np.abs(obj[1:]))
    again = train_tv(ubm, stats, 3, 6, Rng(2))
    assert again.T.tobytes() == tv.T.tobytes()


def test_rank_larger_than_data_rejected():
    ubm, _, stats = planted_stats(U=5)
    with pytest.raises(ValueError):
        train_tv(ubm, stats, 6, 1, Rng(0))


def test_batch_extraction_and_shape_checks():
    tv, rng = toy_model()
    stats = [SuffStats(f"s{k}", rng.uniform(1, 5, size=2), rng.normal(size=(2, 3))) for k in range(4)]
    W = extract_ivectors(tv, stats)
    assert W.shape == (4, 2)
    np.testing.assert_array_equal(W[2], extract_ivector(tv, stats[2]).w)
    with pytest.raises(ValueError):
        extract_ivector(tv, SuffStats("bad", np.ones(3), np.zeros((3, 3))))
    with pytest.raises(ValueError):
        TvModel(np.zeros((5, 2)), tv.ubm)
