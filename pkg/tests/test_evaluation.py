import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embedprobe.corpus import CorpusConfig, synthesize
from embedprobe.evaluation import (
    Trial,
    TrialConfig,
    TrialError,
    compute_eer,
    condition_of,
    cosine_score,
    eer_by_condition,
    enroll,
    gen_trials,
    read_trials,
    roc_points,
    score_trials,
    write_scores,
    write_trials,
)
from embedprobe.numerics import Rng


def brute_force_eer(tgt, imp):
    """Threshold sweep with explicit per-threshold counting (accept when score >= t)."""
    thresholds = sorted(set(tgt) | set(imp)) + [float("inf")]
    far = [sum(1 for s in imp if s >= t) / len(imp) for t in thresholds]
    frr = [sum(1 for s in tgt if s < t) / len(tgt) for t in thresholds]
    for k, (fa, fr) in enumerate(zip(far, frr)):
        if fr - fa >= 0:
            if k == 0:
                return fa
            d0, d1 = frr[k - 1] - far[k - 1], fr - fa
            a = d0 / (d0 - d1)
            return far[k - 1] + a * (fa - far[k - 1])
    raise AssertionError("sweep never crossed")


@pytest.fixture(scope="module")
def eval_utts():
    cfg = CorpusConfig(n_bkg_speakers=1, n_eval_speakers=5, n_sentences=4, vocab_size=10, sessions_per_sentence=5, feature_dim=4)
    manifest, _ = synthesize(cfg)
    return manifest.subset("eval")


def test_trials_satisfy_conditions(eval_utts):
    cfg = TrialConfig(enroll_sessions=3, n_per_condition=30)
    trials = gen_trials(eval_utts, cfg, Rng(0))
    by_id = {u.utt_id: u for u in eval_utts}
    counts = {}
    for t in trials:
        counts[t.condition] = counts.get(t.condition, 0) + 1
        assert condition_of(t.enroll_speaker, t.enroll_sentence, by_id[t.test_utt_id]) == t.condition
        assert t.test_utt_id not in t.enroll_utt_ids
        assert len(t.enroll_utt_ids) == 3
        for e in t.enroll_utt_ids:
            assert (by_id[e].speaker_id, by_id[e].sentence_id) == (t.enroll_speaker, t.enroll_sentence)
    assert counts["I"] == counts["II"] == counts["III"] == 30
    assert counts["target"] == 5 * 4 * 2
    assert len({(t.enroll_utt_ids, t.test_utt_id) for t in trials}) == len(trials)


def test_trial_counts_and_determinism(eval_utts):
    cfg = TrialConfig(n_per_condition=20, n_target=15)
    a = gen_trials(eval_utts, cfg, Rng(3))
    assert a == gen_trials(eval_utts, cfg, Rng(3))
    assert sum(t.condition == "target" for t in a) == 15
    with pytest.raises(TrialError):
        gen_trials(eval_utts, TrialConfig(enroll_sessions=5), Rng(0))


def test_trial_and_score_files(tmp_path, eval_utts):
    trials = gen_trials(eval_utts, TrialConfig(n_per_condition=5), Rng(1))
    write_trials(tmp_path / "t.txt", trials)
    back = read_trials(tmp_path / "t.txt", {u.utt_id: u for u in eval_utts})
    assert back == trials
    emb = {u.utt_id: np.random.default_rng(k).normal(size=3) for k, u in enumerate(eval_utts)}
    scores = score_trials(trials, emb)
    write_scores(tmp_path / "s.txt", trials, scores)
    line = (tmp_path / "s.txt").read_text().splitlines()[0].split("\t")
    assert len(line) == 4 and float(line[3]) == pytest.approx(scores[0], rel=1e-8)
    (tmp_path / "bad.txt").write_text("IV\ta\tb\n")
    with pytest.raises(TrialError):
        read_trials(tmp_path / "bad.txt", {})


def test_enroll_cases():
    v = np.array([3.0, 4.0])
    np.testing.assert_allclose(enroll(v[None]), [0.6, 0.8])
    np.testing.assert_allclose(enroll(np.stack([v] * 4)), [0.6, 0.8])
    a, b = np.array([1.0, 0.0]), np.array([0.0, 2.0])
    mid = np.array([0.5, 1.0]) / np.sqrt(1.25)
    np.testing.assert_allclose(enroll(np.stack([a, b])), mid, atol=1e-15)
    with pytest.raises(ValueError):
        enroll(np.stack([a, -a]))


def test_cosine_cases():
    a = np.array([1.0, 2.0, -0.5])
    assert cosine_score(a, a) == pytest.approx(1.0, abs=1e-15)
    assert cosine_score(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == 0.0
    assert cosine_score(a, -a) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(ValueError):
        cosine_score(a, np.zeros(3))


@given(seed=st.integers(0, 10_000), alpha=st.floats(1e-3, 1e3), beta=st.floats(1e-3, 1e3))
def test_cosine_scale_invariance(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=5), rng.normal(size=5)
    assert cosine_score(alpha * a, beta * b) == pytest.approx(cosine_score(a, b), abs=1e-12)


def test_eer_perfect_and_tied():
    assert compute_eer([1.0, 0.9], [0.1, 0.2]).eer == 0.0
    assert compute_eer([0.5, 0.5], [0.5, 0.5]).eer == 0.5


def test_eer_matches_brute_force_sweep():
    rng = np.random.default_rng(0)
    tgt = rng.normal(1.0, 1.0, size=1000)
    imp = rng.normal(0.0, 1.0, size=1000)
    assert abs(compute_eer(tgt, imp).eer - brute_force_eer(list(tgt), list(imp))) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(
    tgt=st.lists(st.integers(-20, 20), min_size=1, max_size=40),
    imp=st.lists(st.integers(-20, 20), min_size=1, max_size=40),
)
def test_eer_brute_force_with_ties(tgt, imp):
    t, i = [x / 4 for x in tgt], [x / 4 for x in imp]
    assert abs(compute_eer(t, i).eer - brute_force_eer(t, i)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-2, 2))
def test_eer_invariances(seed, shift):
    rng = np.random.default_rng(seed)
    tgt = rng.normal(shift, 1.0, size=200)
    imp = rng.normal(0.0, 1.0, size=200)
    base = compute_eer(tgt, imp).eer
    assert compute_eer(np.exp(tgt), np.exp(imp)).eer == pytest.approx(base, abs=1e-12)
    assert compute_eer(3.0 * tgt + 7.0, 3.0 * imp + 7.0).eer == pytest.approx(base, abs=1e-12)
    assert compute_eer(-imp, -tgt).eer == pytest.approx(base, abs=1e-12)


def test_roc_endpoints():
    far, frr, thr = roc_points(np.array([0.2, 0.8]), np.array([0.1, 0.5]))
    assert (far[0], frr[0]) == (1.0, 0.0)
    assert (far[-1], frr[-1], thr[-1]) == (0.0, 1.0, np.inf)
    assert np.all(np.diff(far) <= 0) and np.all(np.diff(frr) >= 0)


def test_eer_by_condition_splits():
    trials = [Trial("s", 0, ("e",), f"t{k}", c) for k, c in enumerate(["target", "target", "I", "II", "III"])]
    res = eer_by_condition(trials, np.array([0.9, 0.8, 0.95, 0.1, 0.0]))
    assert set(res) == {"I", "II", "III"}
    assert res["II"].eer == 0.0 and res["I"].eer > 0.0
    assert res["I"].n_target == 2 and res["I"].n_impostor == 1
    with pytest.raises(ValueError):
        compute_eer([], [0.1])
