import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embedprobe.corpus import FeatureMatrix, concat_utterances
from embedprobe.gmm import GmmUbm, accumulate_stats, responsibilities, train_ubm
from embedprobe.numerics import Rng


def random_ubm(rng, C, D):
    w = rng.uniform(0.5, 1.5, size=C)
    return GmmUbm(w / w.sum(), rng.normal(size=(C, D)), rng.uniform(0.5, 2.0, size=(C, D)))


def density(x, mu, var):
    # plain product of univariate normal pdfs
    p = 1.0
    for xi, mi, vi in zip(x, mu, var):
        p *= math.exp(-((xi - mi) ** 2) / (2 * vi)) / math.sqrt(2 * math.pi * vi)
    return p


def test_single_component_closed_form():
    X = np.random.default_rng(0).normal(loc=2.0, scale=1.5, size=(500, 3))
    ubm = train_ubm(X, 1, 1, Rng(0))
    np.testing.assert_allclose(ubm.weights, [1.0])
    np.testing.assert_allclose(ubm.means[0], X.mean(axis=0), atol=1e-10)
    np.testing.assert_allclose(ubm.variances[0], X.var(axis=0), rtol=1e-9)


def test_two_clusters_recovered():
    rng = np.random.default_rng(1)
    true = np.array([[-5.0, 0.0], [5.0, 3.0]])
    labels = rng.integers(0, 2, size=2000)
    X = true[labels] + rng.normal(size=(2000, 2))
    oracle = np.stack([X[labels == k].mean(axis=0) for k in range(2)])
    ubm = train_ubm(X, 2, 10, Rng(1))
    order = np.argsort(ubm.means[:, 0])
    assert np.max(np.abs(ubm.means[order] - oracle)) < 0.1


def test_em_monotone_over_twenty_iterations():
    rng = np.random.default_rng(2)
    X = np.concatenate([rng.normal(loc=k, size=(300, 4)) for k in range(4)])
    ubm = train_ubm(X, 6, 20, Rng(2))
    llh = np.array(ubm.train_llh)
    assert len(llh) == 21
    assert np.all(np.diff(llh) >= -1e-8 * np.abs(llh[1:]))


def test_variance_floor_respected():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(400, 3))
    X[:200, 0] = 1.0  # a collapsed dimension invites tiny variances
    ubm = train_ubm(X, 4, 5, Rng(3))
    assert np.all(ubm.variances >= ubm.var_floor[None, :] - 1e-18)


def test_training_deterministic_and_preconditions():
    X = np.random.default_rng(4).normal(size=(300, 2))
    a, b = train_ubm(X, 3, 3, Rng(9)), train_ubm(X, 3, 3, Rng(9))
    np.testing.assert_array_equal(a.means, b.means)
    with pytest.raises(ValueError):
        train_ubm(X[:20], 3, 1, Rng(0))
    with pytest.raises(ValueError):
        train_ubm(np.zeros((0, 2)), 1, 1, Rng(0))
    with pytest.raises(ValueError):
        train_ubm(X, 0, 1, Rng(0))


def test_responsibilities_single_component():
    ubm = GmmUbm(np.ones(1), np.zeros((1, 2)), np.ones((1, 2)))
    np.testing.assert_allclose(responsibilities(ubm, np.array([3.0, -1.0])), [1.0])


def test_responsibilities_dominance():
    ubm = GmmUbm(np.array([0.5, 0.5]), np.array([[0.0, 0.0], [20.0, 20.0]]), np.ones((2, 2)))
    assert responsibilities(ubm, np.zeros(2))[0] > 0.99


def test_responsibilities_match_direct_density():
    rng = np.random.default_rng(5)
    ubm = random_ubm(rng, 4, 3)
    x = rng.normal(size=3)
    p = np.array([ubm.weights[c] * density(x, ubm.means[c], ubm.variances[c]) for c in range(4)])
    np.testing.assert_allclose(responsibilities(ubm, x), p / p.sum(), rtol=1e-12)


def test_log_likelihood_matches_direct_density():
    rng = np.random.default_rng(6)
    ubm = random_ubm(rng, 3, 2)
    X = rng.normal(size=(5, 2))
    direct = sum(math.log(sum(ubm.weights[c] * density(x, ubm.means[c], ubm.variances[c]) for c in range(3))) for x in X)
    assert ubm.log_likelihood(X) == pytest.approx(direct, rel=1e-12)


def test_stats_total_count_and_centering():
    rng = np.random.default_rng(7)
    ubm = random_ubm(rng, 4, 3)
    X = rng.normal(size=(37, 3))
    s = accumulate_stats(ubm, X)
    assert s.N.sum() == pytest.approx(37, abs=1e-10)
    dom = GmmUbm(np.array([0.5, 0.5]), np.array([[0.0, 0.0], [30.0, 30.0]]), np.ones((2, 2)))
    s1 = accumulate_stats(dom, dom.means[:1])
    assert np.linalg.norm(s1.F[0]) < 1e-6


def test_stats_match_double_loop():
    rng = np.random.default_rng(8)
    ubm = random_ubm(rng, 2, 3)
    X = rng.normal(size=(3, 3))
    N = np.zeros(2)
    F = np.zeros((2, 3))
    for x in X:
        p = [ubm.weights[c] * density(x, ubm.means[c], ubm.variances[c]) for c in range(2)]
        tot = sum(p)
        for c in range(2):
            g = p[c] / tot
            N[c] += g
            for d in range(3):
                F[c, d] += g * (x[d] - ubm.means[c, d])
    s = accumulate_stats(ubm, X)
    np.testing.assert_allclose(s.N, N, rtol=1e-12)
    np.testing.assert_allclose(s.F, F, rtol=1e-10, atol=1e-12)


@settings(deadline=None, max_examples=40)
@given(ta=st.integers(1, 30), tb=st.integers(1, 30), seed=st.integers(0, 10_000))
def test_stats_linearity(ta, tb, seed):
    rng = np.random.default_rng(seed)
    ubm = random_ubm(rng, 3, 2)
    a = FeatureMatrix("a", rng.normal(size=(ta, 2)).astype(np.float32))
    b = FeatureMatrix("b", rng.normal(size=(tb, 2)).astype(np.float32))
    joint = accumulate_stats(ubm, concat_utterances(a, b))
    parts = accumulate_stats(ubm, a) + accumulate_stats(ubm, b)
    np.testing.assert_allclose(joint.N, parts.N, atol=1e-8)
    np.testing.assert_allclose(joint.F, parts.F, atol=1e-8)


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        GmmUbm(np.array([0.5, 0.6]), np.zeros((2, 1)), np.ones((2, 1)))
    with pytest.raises(ValueError):
        GmmUbm(np.array([1.0]), np.zeros((1, 1)), np.zeros((1, 1)))
