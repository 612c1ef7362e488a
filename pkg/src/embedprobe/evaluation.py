"""Text-dependent verification trials, cosine scoring and EER."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import UttMeta
from .numerics import Rng

CONDITIONS = ("target", "I", "II", "III")


class TrialError(ValueError):
    pass


@dataclass(frozen=True)
class Trial:
    enroll_speaker: str
    enroll_sentence: int
    enroll_utt_ids: tuple[str, ...]
    test_utt_id: str
    condition: str


@dataclass
class EerResult:
    condition: str
    eer: float
    threshold: float
    n_target: int
    n_impostor: int


@dataclass
class TrialConfig:
    enroll_sessions: int = 3
    n_per_condition: int = 200
    n_target: int | None = None  # None keeps every target trial


def condition_of(enroll_speaker: str, enroll_sentence: int, test: UttMeta) -> str:
    same_spk = test.speaker_id == enroll_speaker
    same_txt = test.sentence_id == enroll_sentence
    if same_spk and same_txt:
        return "target"
    if same_spk:
        return "I"
    if same_txt:
        return "II"
    return "III"


def gen_trials(utts: Sequence[UttMeta], cfg: TrialConfig, rng: Rng) -> list[Trial]:
    """Enroll on the first sessions of every (speaker, sentence); test on the rest.

    Impostor trials for conditions I/II/III draw a random enrollment model and
    a random held-out test utterance meeting the condition.
    """
    groups: dict[tuple[str, int], list[UttMeta]] = defaultdict(list)
    for u in utts:
        groups[(u.speaker_id, u.sentence_id)].append(u)
    models = []
    tests: list[UttMeta] = []
    for key in sorted(groups):
        g = sorted(groups[key], key=lambda u: (u.session, u.utt_id))
        if len(g) < cfg.enroll_sessions + 1:
            raise TrialError(f"{key}: need more than {cfg.enroll_sessions} sessions, have {len(g)}")
        models.append((key, tuple(u.utt_id for u in g[: cfg.enroll_sessions])))
        tests.extend(g[cfg.enroll_sessions :])

    targets = []
    by_key = {key: ids for key, ids in models}
    for t in tests:
        key = (t.speaker_id, t.sentence_id)
        targets.append(Trial(key[0], key[1], by_key[key], t.utt_id, "target"))
    if cfg.n_target is not None:
        if cfg.n_target > len(targets):
            raise TrialError(f"only {len(targets)} target trials available")
        pick = np.sort(rng.child("target").choice(len(targets), size=cfg.n_target, replace=False))
        targets = [targets[k] for k in pick]

    out = list(targets)
    for cond in ("I", "II", "III"):
        crng = rng.child(cond)
        seen: set[tuple[int, int]] = set()
        chosen: list[Trial] = []
        # candidates per model are enumerated lazily; rejection sampling over (model, test) pairs
        attempts = 0
        while len(chosen) < cfg.n_per_condition:
            attempts += 1
            if attempts > 1000 * cfg.n_per_condition + 10000:
                raise TrialError(f"cannot sample {cfg.n_per_condition} condition-{cond} trials")
            mi = int(crng.integers(len(models)))
            ti = int(crng.integers(len(tests)))
            (spk, sent), ids = models[mi]
            if (mi, ti) in seen or condition_of(spk, sent, tests[ti]) != cond:
                continue
            seen.add((mi, ti))
            chosen.append(Trial(spk, sent, ids, tests[ti].utt_id, cond))
        out.extend(chosen)
    return out


def write_trials(path: str | Path, trials: Sequence[Trial]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(f"{t.condition}\t{','.join(t.enroll_utt_ids)}\t{t.test_utt_id}\n")


def read_trials(path: str | Path, utts: dict[str, UttMeta]) -> list[Trial]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[0] not in CONDITIONS:
                raise TrialError(f"{path}:{lineno}: malformed trial line")
            enroll = tuple(parts[1].split(","))
            try:
                first = utts[enroll[0]]
                utts[parts[2]]
            except KeyError as exc:
                raise TrialError(f"{path}:{lineno}: unknown utterance {exc}") from exc
            out.append(Trial(first.speaker_id, first.sentence_id, enroll, parts[2], parts[0]))
    return out


def enroll(embeddings: np.ndarray) -> np.ndarray:
    """Mean of the enrollment embeddings scaled to unit length."""
    E = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if E.shape[0] < 1:
        raise ValueError("need at least one enrollment embedding")
    mean = E.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm <= 1e-12:
        raise ValueError("enrollment mean has zero norm")
    return mean / norm


def cosine_score(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= 1e-12 or nb <= 1e-12:
        raise ValueError("cosine score of a near-zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def score_trials(trials: Sequence[Trial], emb: dict[str, np.ndarray]) -> np.ndarray:
    models: dict[tuple[str, ...], np.ndarray] = {}
    scores = np.empty(len(trials))
    for k, t in enumerate(trials):
        model = models.get(t.enroll_utt_ids)
        if model is None:
            model = models[t.enroll_utt_ids] = enroll(np.stack([emb[u] for u in t.enroll_utt_ids]))
        scores[k] = cosine_score(model, emb[t.test_utt_id])
    return scores


def write_scores(path: str | Path, trials: Sequence[Trial], scores: Sequence[float]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t, s in zip(trials, scores):
            fh.write(f"{t.condition}\t{','.join(t.enroll_utt_ids)}\t{t.test_utt_id}\t{s:.9g}\n")


def _crossing(far: np.ndarray, frr: np.ndarray, thr: np.ndarray) -> tuple[float, float]:
    diff = frr - far
    k = int(np.argmax(diff >= 0))  # diff is non-decreasing and ends at +1
    if k == 0:
        return float(far[0]), float(thr[0])
    d0, d1 = diff[k - 1], diff[k]
    a = d0 / (d0 - d1)
    eer = far[k - 1] + a * (far[k] - far[k - 1])
    t_lo, t_hi = thr[k - 1], thr[k]
    t = t_lo + a * (t_hi - t_lo) if np.isfinite(t_hi) else t_lo
    return float(eer), float(t)


def roc_points(target: np.ndarray, impostor: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """FAR/FRR at each unique score taken as threshold (accept when score >= thr), plus +inf."""
    tgt = np.sort(np.asarray(target, dtype=np.float64))
    imp = np.sort(np.asarray(impostor, dtype=np.float64))
    thr = np.unique(np.concatenate([tgt, imp]))
    frr = np.searchsorted(tgt, thr, side="left") / len(tgt)
    far = (len(imp) - np.searchsorted(imp, thr, side="left")) / len(imp)
    return np.append(far, 0.0), np.append(frr, 1.0), np.append(thr, np.inf)


def compute_eer(target_scores, impostor_scores, condition: str = "") -> EerResult:
    tgt = np.asarray(target_scores, dtype=np.float64)
    imp = np.asarray(impostor_scores, dtype=np.float64)
    if tgt.size == 0 or imp.size == 0:
        raise ValueError("need non-empty target and impostor score lists")
    far, frr, thr = roc_points(tgt, imp)
    eer, t = _crossing(far, frr, thr)
    return EerResult(condition, eer, t, int(tgt.size), int(imp.size))


def eer_by_condition(trials: Sequence[Trial], scores: np.ndarray) -> dict[str, EerResult]:
    cond = np.array([t.condition for t in trials])
    tgt = scores[cond == "target"]
    return {c: compute_eer(tgt, scores[cond == c], c) for c in ("I", "II", "III") if np.any(cond == c)}
