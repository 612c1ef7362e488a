"""The eight probing tasks: dataset construction, MLP/logistic probes, reports.

A probe is trained on frozen eval-subset embeddings. Tasks that need new
audio (speaking rate, utterance length, word order) perturb or concatenate
the eval features and re-embed them with the same extractor.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import RATE_FACTORS, FeatureMatrix, UttMeta, concat_utterances, perturb_rate
from .embeddings import Extractor
from .nnet import MLP, ClassifierData, DenseLayer, TrainConfig, sigmoid_bce, train_classifier
from .numerics import Rng

log = logging.getLogger(__name__)

LENGTH_BINS = ((1.0, 3.0), (4.0, 6.0), (7.0, 9.0), (10.0, 12.0))
RATE_ORDER = (0.5, 1.0, 1.5)  # slow, normal, fast
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)
TRAIN, DEV, TEST = 0, 1, 2
CSV_FIELDS = ("task", "kind", "dim", "accuracy", "baseline", "n_train", "n_test", "seed")


class ProbeTask(str, Enum):
    speaker = "speaker"
    text = "text"
    term = "term"
    order = "order"
    length = "length"
    channel = "channel"
    gender = "gender"
    rate = "rate"


TASK_NAMES = tuple(t.value for t in ProbeTask)


class ProbeError(ValueError):
    pass


@dataclass
class ProbeConfig:
    hidden: int = 256
    lr: float = 1e-3
    batch: int = 64
    patience: int = 10
    max_epochs: int = 200
    order_pairs: int = 500
    length_per_bin: int = 100
    rate_max_utts: int | None = None
    term_strict: bool = False


@dataclass
class ProbeDataset:
    task: ProbeTask
    X: np.ndarray
    y: np.ndarray  # (n,) class ids, or (n, V) presence bitmap for the term task
    split: np.ndarray  # (n,) TRAIN / DEV / TEST
    n_classes: int
    groups: np.ndarray | None = None
    word_sets: list[np.ndarray] | None = None

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    def part(self, which: int) -> np.ndarray:
        return np.flatnonzero(self.split == which)


@dataclass
class ProbeReport:
    task: str
    kind: str
    dim: int
    accuracy: float
    baseline: float
    n_train: int
    n_test: int
    seed: int
    dev_accuracy: float = float("nan")
    predictions: np.ndarray | None = field(default=None, repr=False)
    truth: np.ndarray | None = field(default=None, repr=False)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}


# ------------------------------------------------------------------ splits


def stratified_split(strata: np.ndarray, rng: Rng, groups: np.ndarray | None = None) -> np.ndarray:
    """80/10/10 per stratum; members of one group always land in the same split."""
    strata = np.asarray(strata)
    groups = np.arange(len(strata)) if groups is None else np.asarray(groups)
    group_ids, first = np.unique(groups, return_index=True)
    group_stratum = strata[first]
    split_of_group = {}
    for s in np.unique(group_stratum):
        members = group_ids[group_stratum == s]
        members = members[rng.child(f"stratum/{s}").permutation(len(members))]
        n = len(members)
        n_dev = max(1, int(round(SPLIT_FRACTIONS[1] * n)))
        n_test = max(1, int(round(SPLIT_FRACTIONS[2] * n)))
        if n - n_dev - n_test < 1:
            raise ProbeError(f"stratum {s!r} has only {n} groups; cannot populate train/dev/test")
        for k, g in enumerate(members):
            split_of_group[g] = DEV if k < n_dev else TEST if k < n_dev + n_test else TRAIN
    return np.array([split_of_group[g] for g in groups], dtype=np.int64)


def _check_classes(y: np.ndarray, split: np.ndarray) -> None:
    classes = np.unique(y)
    for part in (TRAIN, DEV, TEST):
        present = np.unique(y[split == part])
        if len(present) != len(classes):
            raise ProbeError(f"class missing from split {part}")


# ------------------------------------------------------------- dataset build


def length_bin(duration_s: float) -> int | None:
    for k, (lo, hi) in enumerate(LENGTH_BINS):
        if lo - 1e-9 <= duration_s <= hi + 1e-9:
            return k
    return None


def _pick_label(task: ProbeTask, u: UttMeta, speakers: dict, channels: dict) -> int:
    if task is ProbeTask.speaker:
        return speakers[u.speaker_id]
    if task is ProbeTask.text:
        return u.sentence_id
    if task is ProbeTask.channel:
        return channels[u.channel_id]
    if task is ProbeTask.gender:
        return 0 if u.gender == "F" else 1
    raise ProbeError(f"{task.value} is not a copy-label task")


def _relabel(values) -> dict:
    return {v: k for k, v in enumerate(sorted(set(values)))}


def _embed(extractor: Extractor, feats: Sequence[FeatureMatrix]) -> np.ndarray:
    X = extractor.embed(list(feats))
    if X.shape != (len(feats), extractor.dim):
        raise ProbeError(f"extractor returned shape {X.shape}, expected ({len(feats)}, {extractor.dim})")
    return X


def _static(utts, embeddings, extractor, load):
    if embeddings is not None:
        missing = [u.utt_id for u in utts if u.utt_id not in embeddings]
        if missing:
            raise ProbeError(f"embeddings missing for {len(missing)} utterances (first: {missing[0]})")
        X = np.stack([np.asarray(embeddings[u.utt_id], dtype=np.float64) for u in utts])
        if extractor is not None and X.shape[1] != extractor.dim:
            raise ProbeError("stored embeddings do not match the extractor dimension")
        return X
    if extractor is None or load is None:
        raise ProbeError("need stored embeddings or an extractor with a feature loader")
    return _embed(extractor, [load(u) for u in utts])


def build_task_dataset(
    task: ProbeTask | str,
    utts: Sequence[UttMeta],
    cfg: ProbeConfig,
    rng: Rng,
    extractor: Extractor | None = None,
    load: Callable[[UttMeta], FeatureMatrix] | None = None,
    embeddings: dict[str, np.ndarray] | None = None,
    vocab_size: int | None = None,
) -> ProbeDataset:
    task = ProbeTask(task)
    utts = list(utts)
    if not utts:
        raise ProbeError("no utterances to probe")
    groups = None
    word_sets = None

    if task in (ProbeTask.speaker, ProbeTask.text, ProbeTask.channel, ProbeTask.gender):
        X = _static(utts, embeddings, extractor, load)
        speakers = _relabel(u.speaker_id for u in utts)
        channels = _relabel(u.channel_id for u in utts)
        y = np.array([_pick_label(task, u, speakers, channels) for u in utts])
        n_classes = len(np.unique(y))
        split = stratified_split(y, rng.child("split"))

    elif task is ProbeTask.term:
        X = _static(utts, embeddings, extractor, load)
        V = vocab_size if vocab_size is not None else max(max(u.word_ids) for u in utts) + 1
        y = np.zeros((len(utts), V), dtype=np.int64)
        for k, u in enumerate(utts):
            y[k, u.word_ids] = 1
        word_sets = [np.array(sorted(set(u.word_ids))) for u in utts]
        n_classes = V
        split = stratified_split(np.array([u.sentence_id for u in utts]), rng.child("split"))

    elif task is ProbeTask.rate:
        _need(extractor, load, task)
        base = utts
        if cfg.rate_max_utts is not None and cfg.rate_max_utts < len(utts):
            pick = np.sort(rng.child("subset").choice(len(utts), size=cfg.rate_max_utts, replace=False))
            base = [utts[k] for k in pick]
        feats = [load(u) for u in base]
        blocks, labels, grp = [], [], []
        for cls, factor in enumerate(RATE_ORDER):
            blocks.append(_embed(extractor, [perturb_rate(f, factor) for f in feats]))
            labels.append(np.full(len(feats), cls))
            grp.append(np.arange(len(feats)))
        X = np.concatenate(blocks)
        y = np.concatenate(labels)
        groups = np.concatenate(grp)
        n_classes = len(RATE_ORDER)
        split = stratified_split(np.zeros(len(y), dtype=int), rng.child("split"), groups)

    elif task is ProbeTask.length:
        _need(extractor, load, task)
        by_spk: dict[str, list[UttMeta]] = defaultdict(list)
        for u in utts:
            by_spk[u.speaker_id].append(u)
        spk_ids = sorted(by_spk)
        cache: dict[str, FeatureMatrix] = {}

        def feat(u):
            if u.utt_id not in cache:
                cache[u.utt_id] = load(u)
            return cache[u.utt_id]

        lrng = rng.child("concat")
        samples, labels = [], []
        for b, (lo, hi) in enumerate(LENGTH_BINS):
            made = 0
            tries = 0
            while made < cfg.length_per_bin:
                tries += 1
                if tries > 100 * cfg.length_per_bin:
                    raise ProbeError(f"cannot build utterances for length bin {lo}-{hi}s")
                pool = by_spk[spk_ids[int(lrng.integers(len(spk_ids)))]]
                cur = feat(pool[int(lrng.integers(len(pool)))])
                while cur.duration < lo - 1e-9:
                    cur = concat_utterances(cur, feat(pool[int(lrng.integers(len(pool)))]))
                if length_bin(cur.duration) != b:
                    continue
                samples.append(cur)
                labels.append(b)
                made += 1
        X = _embed(extractor, samples)
        y = np.array(labels)
        n_classes = len(LENGTH_BINS)
        split = stratified_split(y, rng.child("split"))

    elif task is ProbeTask.order:
        _need(extractor, load, task)
        prng = rng.child("pairs")
        pairs = []
        attempts = 0
        while len(pairs) < cfg.order_pairs:
            attempts += 1
            if attempts > 100 * cfg.order_pairs:
                raise ProbeError("cannot sample enough order pairs with distinct sentences")
            a, b = (int(v) for v in prng.choice(len(utts), size=2, replace=False))
            if utts[a].sentence_id != utts[b].sentence_id:
                pairs.append((a, b))
        used = sorted({k for p in pairs for k in p})
        feats = {k: load(utts[k]) for k in used}
        single = dict(zip(used, _embed(extractor, [feats[k] for k in used])))
        fwd = _embed(extractor, [concat_utterances(feats[a], feats[b]) for a, b in pairs])
        rev = _embed(extractor, [concat_utterances(feats[b], feats[a]) for a, b in pairs])
        U1 = np.stack([single[a] for a, _ in pairs])
        U2 = np.stack([single[b] for _, b in pairs])
        X = np.concatenate([np.hstack([fwd, U1, U2]), np.hstack([rev, U1, U2])])
        y = np.concatenate([np.ones(len(pairs), dtype=np.int64), np.zeros(len(pairs), dtype=np.int64)])
        groups = np.concatenate([np.arange(len(pairs)), np.arange(len(pairs))])
        n_classes = 2
        split = stratified_split(np.zeros(len(y), dtype=int), rng.child("split"), groups)

    else:  # pragma: no cover - enum is exhaustive
        raise ProbeError(f"unknown task {task}")

    if not np.all(np.isfinite(X)):
        raise ProbeError("non-finite probe inputs")
    if task is not ProbeTask.term:
        _check_classes(y, split)
    return ProbeDataset(task, X, y, split, n_classes, groups, word_sets)


def _need(extractor, load, task):
    if extractor is None or load is None:
        raise ProbeError(f"the {task.value} task re-embeds audio and needs an extractor and feature loader")


# ------------------------------------------------------------------ probes


class _Standardizer:
    def __init__(self, X: np.ndarray):
        self.mean = X.mean(axis=0)
        self.std = np.maximum(X.std(axis=0), 1e-8)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std


class LogisticBank:
    """One binary logistic regression per vocabulary word, trained jointly."""

    heads = ("term",)

    def __init__(self, layer: DenseLayer):
        self.layer = layer

    def params(self):
        return {"W": self.layer.W, "b": self.layer.b}

    def loss_and_grads(self, x, labels):
        loss, _, g = sigmoid_bce(self.layer, x, labels["term"])
        return loss, g

    def presence(self, x: np.ndarray) -> np.ndarray:
        return (x @ self.layer.W.T + self.layer.b) > 0

    def predict(self, x):
        return {"term": self.presence(x)}


@dataclass
class ProbeModel:
    task: ProbeTask
    scaler: _Standardizer
    net: MLP | LogisticBank
    dev_accuracy: float
    strict: bool = False

    def predict(self, X: np.ndarray) -> np.ndarray:
        Z = self.scaler(X)
        if isinstance(self.net, LogisticBank):
            return self.net.presence(Z)
        return self.net.predict(Z)["label"]


def spoken_term_eval(bank: LogisticBank, embedding: np.ndarray, true_words, strict: bool = False) -> bool:
    """Utterance is correct iff every in-utterance word is predicted present.

    With ``strict`` the whole vocabulary must match (absent words predicted absent too).
    """
    pred = bank.presence(np.atleast_2d(embedding))[0]
    words = np.asarray(sorted(set(int(w) for w in true_words)), dtype=np.int64)
    if words.size and (words.min() < 0 or words.max() >= pred.size):
        raise ProbeError(f"word id outside the trained vocabulary of {pred.size}")
    if strict:
        truth = np.zeros(pred.size, dtype=bool)
        truth[words] = True
        return bool(np.array_equal(pred, truth))
    return bool(np.all(pred[words]))


def _term_correct(presence: np.ndarray, Y: np.ndarray, strict: bool) -> np.ndarray:
    Yb = Y.astype(bool)
    if strict:
        return np.all(presence == Yb, axis=1)
    return np.all(presence | ~Yb, axis=1)


def train_probe(ds: ProbeDataset, cfg: ProbeConfig, rng: Rng) -> ProbeModel:
    tr, dv = ds.part(TRAIN), ds.part(DEV)
    if len(tr) == 0 or len(dv) == 0:
        raise ProbeError("probe dataset needs train and dev samples")
    scaler = _Standardizer(ds.X[tr])
    Z = scaler(ds.X)
    tcfg = TrainConfig(epochs=cfg.max_epochs, batch=cfg.batch, optimizer="rmsprop", lr=cfg.lr, patience=cfg.patience)
    if ds.task is ProbeTask.term:
        bank = LogisticBank(DenseLayer.init(rng.child("init"), ds.input_dim, ds.n_classes))
        train = ClassifierData.from_arrays(Z[tr], {"term": ds.y[tr]})
        dev = ClassifierData.from_arrays(Z[dv], {"term": ds.y[dv]})

        def dev_metric(model):
            return float(np.mean(_term_correct(model.presence(Z[dv]), ds.y[dv], cfg.term_strict)))

        hist = train_classifier(bank, train, dev, tcfg, rng.child("train"), metric=dev_metric)
        return ProbeModel(ds.task, scaler, bank, hist.best_dev, cfg.term_strict)
    net = MLP.init(rng.child("init"), [ds.input_dim, cfg.hidden], ds.n_classes, "relu")
    train = ClassifierData.from_arrays(Z[tr], {"label": ds.y[tr]})
    dev = ClassifierData.from_arrays(Z[dv], {"label": ds.y[dv]})
    hist = train_classifier(net, train, dev, tcfg, rng.child("train"))
    return ProbeModel(ds.task, scaler, net, hist.best_dev)


def eval_probe(model: ProbeModel, ds: ProbeDataset, kind: str = "", dim: int | None = None, seed: int = 0) -> ProbeReport:
    te = ds.part(TEST)
    pred = model.predict(ds.X[te])
    truth = ds.y[te]
    if ds.task is ProbeTask.term:
        correct = _term_correct(pred, truth, model.strict)
        V = truth.shape[1]
        if model.strict:
            baseline = 0.5**V
        else:
            baseline = float(np.mean([0.5 ** int(truth[k].sum()) for k in range(len(truth))]))
        acc = float(np.mean(correct))
    else:
        acc = float(np.mean(pred == truth))
        baseline = 1.0 / len(np.unique(ds.y))
    return ProbeReport(
        task=ds.task.value,
        kind=kind,
        dim=ds.input_dim if dim is None else dim,
        accuracy=acc,
        baseline=baseline,
        n_train=int(len(ds.part(TRAIN))),
        n_test=int(len(te)),
        seed=seed,
        dev_accuracy=model.dev_accuracy,
        predictions=pred,
        truth=truth,
    )


def run_probe(
    task: ProbeTask | str,
    utts: Sequence[UttMeta],
    cfg: ProbeConfig,
    rng: Rng,
    extractor: Extractor | None = None,
    load: Callable[[UttMeta], FeatureMatrix] | None = None,
    embeddings: dict[str, np.ndarray] | None = None,
    kind: str | None = None,
    dim: int | None = None,
    vocab_size: int | None = None,
) -> ProbeReport:
    task = ProbeTask(task)
    trng = rng.child(f"probe/{task.value}")
    ds = build_task_dataset(task, utts, cfg, trng.child("data"), extractor, load, embeddings, vocab_size)
    model = train_probe(ds, cfg, trng.child("model"))
    kind = kind if kind is not None else (extractor.kind if extractor is not None else "")
    dim = dim if dim is not None else (extractor.dim if extractor is not None else ds.input_dim)
    report = eval_probe(model, ds, kind, dim, rng.seed)
    log.info("probe %-8s kind=%-6s dim=%-4d acc=%.4f (chance %.4f)", task.value, kind, dim, report.accuracy, report.baseline)
    return report


# ----------------------------------------------------------------- reports


def append_csv(path: str | Path, reports: Sequence[ProbeReport]) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        if new:
            w.writeheader()
        for r in reports:
            row = r.row()
            row["accuracy"] = f"{r.accuracy:.6f}"
            row["baseline"] = f"{r.baseline:.6f}"
            w.writerow(row)


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_summary(path: str | Path, reports: Sequence[ProbeReport]) -> None:
    rows = []
    for r in reports:
        d = r.row()
        d["dev_accuracy"] = r.dev_accuracy
        rows.append(d)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"probes": rows}, fh, indent=2, sort_keys=True)
