"""Utterance embedding extractors: i-, d-, s- and i-s-vectors plus naive concatenation.

* d-vector: frame-level speaker DNN on context-stacked frames; the embedding is
  the mean of the last hidden layer over the utterance.
* s-vector: LSTM trained jointly on speaker and sentence labels; the
  embedding is the final hidden state (``[fwd h_T ; bwd h_1]`` when bidirectional).
* i-s-vector: as the s-vector, except the speaker head reads the LSTM output
  concatenated with the utterance's (frozen) i-vector. The embedding is that
  concatenation.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import FeatureMatrix, UttMeta, context_indices, stack_context
from .gmm import GmmUbm, accumulate_stats
from .ivector import TvModel, extract_ivector
from .nnet import (
    MLP,
    ClassifierData,
    DenseLayer,
    LstmCell,
    SoftmaxHead,
    TrainConfig,
    TrainResult,
    load_emdl,
    pad_sequences,
    params_hash,
    reverse_padded,
    save_emdl,
    softmax_ce,
    train_classifier,
)
from .numerics import Rng

log = logging.getLogger(__name__)

KINDS = ("i", "d", "s", "is", "concat")
EEMB_MAGIC = b"EEMB"
EEMB_VERSION = 1


class EmbeddingError(ValueError):
    pass


@dataclass
class Embedding:
    utt_id: str
    kind: str
    values: np.ndarray
    model_hash: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise EmbeddingError(f"unknown embedding kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(self.values)):
            raise EmbeddingError(f"{self.utt_id}: non-finite embedding")

    @property
    def dim(self) -> int:
        return self.values.size


def concat_embeddings(a: Embedding, b: Embedding) -> Embedding:
    if a.utt_id != b.utt_id:
        raise EmbeddingError(f"utt_id mismatch: {a.utt_id} vs {b.utt_id}")
    return Embedding(a.utt_id, "concat", np.concatenate([a.values, b.values]), f"{a.model_hash}+{b.model_hash}")


# ------------------------------------------------------------------ EEMB I/O


def write_eemb(path: str | Path, ids: Sequence[str], values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2 or len(ids) != values.shape[0]:
        raise EmbeddingError("ids and embedding matrix disagree")
    with open(path, "wb") as fh:
        fh.write(EEMB_MAGIC)
        fh.write(struct.pack("<III", EEMB_VERSION, values.shape[1], values.shape[0]))
        for uid, row in zip(ids, values):
            b = uid.encode("utf-8")
            fh.write(struct.pack("<H", len(b)))
            fh.write(b)
            fh.write(row.tobytes())


def read_eemb(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:4] != EEMB_MAGIC:
        raise EmbeddingError(f"{path}: not an EEMB file")
    version, dim, count = struct.unpack_from("<III", data, 4)
    if version != EEMB_VERSION:
        raise EmbeddingError(f"{path}: unsupported EEMB version {version}")
    pos = 16
    ids = []
    out = np.empty((count, dim), dtype=np.float64)
    try:
        for k in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            ids.append(data[pos : pos + n].decode("utf-8"))
            pos += n
            if pos + 4 * dim > len(data):
                raise EmbeddingError(f"{path}: truncated record {k}")
            out[k] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos)
            pos += 4 * dim
    except struct.error as exc:
        raise EmbeddingError(f"{path}: truncated file") from exc
    return ids, out


# ------------------------------------------------------------- normalisation


@dataclass
class FeatureNorm:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, feats: Sequence[FeatureMatrix]) -> "FeatureNorm":
        X = np.concatenate([np.asarray(f.frames, dtype=np.float64) for f in feats])
        return cls(X.mean(axis=0), np.maximum(X.std(axis=0), 1e-6))

    def __call__(self, frames: np.ndarray) -> np.ndarray:
        return (np.asarray(frames, dtype=np.float64) - self.mean) / self.std


def _split_dev(metas: Sequence[UttMeta], dev_sessions: int) -> tuple[list[int], list[int]]:
    """Hold out the last ``dev_sessions`` sessions of every (speaker, sentence) pair."""
    top = max(m.session for m in metas)
    cut = top - dev_sessions + 1
    train = [k for k, m in enumerate(metas) if m.session < cut]
    dev = [k for k, m in enumerate(metas) if m.session >= cut]
    if not train or not dev:
        raise EmbeddingError("dev split needs at least two sessions per sentence")
    return train, dev


def _label_map(values: Sequence) -> dict:
    return {v: k for k, v in enumerate(sorted(set(values)))}


# ------------------------------------------------------------------ d-vector


@dataclass
class DVectorConfig:
    context: tuple[int, int] = (5, 5)
    hidden: tuple[int, ...] = (256, 256, 256)
    activation: str = "sigmoid"
    dev_sessions: int = 1
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(epochs=8, batch=256, optimizer="sgd", lr=0.5, patience=3, max_batches_per_epoch=600)
    )


@dataclass
class DVectorModel:
    net: MLP
    norm: FeatureNorm
    context: tuple[int, int]
    speakers: list[str]
    history: TrainResult | None = None

    @property
    def dim(self) -> int:
        return self.net.layers[-1].n_out

    @property
    def input_dim(self) -> int:
        return self.net.layers[0].n_in

    def model_hash(self) -> str:
        return params_hash(self.net.params())

    def frame_embeddings(self, stacked: np.ndarray) -> np.ndarray:
        return self.net.hidden(stacked)

    def stack(self, f: FeatureMatrix) -> np.ndarray:
        return stack_context(self.norm(f.frames), *self.context)


def _frame_data(model_norm: FeatureNorm, feats: Sequence[FeatureMatrix], labels: np.ndarray, context) -> ClassifierData:
    X = np.concatenate([model_norm(f.frames) for f in feats])
    windows = []
    frame_labels = []
    start = 0
    for f, y in zip(feats, labels):
        windows.append(context_indices(f.n_frames, *context) + start)
        frame_labels.append(np.full(f.n_frames, y))
        start += f.n_frames
    win = np.concatenate(windows).astype(np.int64)
    D = X.shape[1]
    return ClassifierData(len(win), lambda idx: X[win[idx]].reshape(len(idx), -1), {"speaker": np.concatenate(frame_labels)})


def train_dvector(
    feats: Sequence[FeatureMatrix],
    metas: Sequence[UttMeta],
    dim: int,
    cfg: DVectorConfig,
    rng: Rng,
) -> DVectorModel:
    if not feats:
        raise EmbeddingError("no background utterances")
    spk = _label_map(m.speaker_id for m in metas)
    y = np.array([spk[m.speaker_id] for m in metas])
    norm = FeatureNorm.fit(feats)
    left, right = cfg.context
    D = feats[0].dim
    sizes = [D * (left + 1 + right), *cfg.hidden, dim]
    net = MLP.init(rng.child("init"), sizes, len(spk), cfg.activation, head="speaker")
    tr, dv = _split_dev(metas, cfg.dev_sessions)
    train = _frame_data(norm, [feats[k] for k in tr], y[tr], cfg.context)
    dev_full = _frame_data(norm, [feats[k] for k in dv], y[dv], cfg.context)
    # dev accuracy on a fixed frame subset keeps early stopping cheap
    pick = np.sort(rng.child("devpick").permutation(dev_full.n)[: min(dev_full.n, 20000)])
    dev = ClassifierData(len(pick), lambda idx: dev_full.fetch(pick[idx]), {"speaker": dev_full.labels["speaker"][pick]})
    hist = train_classifier(net, train, dev, cfg.train, rng.child("train"))
    model = DVectorModel(net, norm, tuple(cfg.context), sorted(spk), hist)
    log.info("d-vector dim %d: best frame dev acc %.4f at epoch %d", dim, hist.best_dev, hist.best_epoch)
    return model


def dvector_from_stacked(model: DVectorModel, stacked: np.ndarray) -> np.ndarray:
    return model.frame_embeddings(stacked).mean(axis=0)


def extract_dvector(model: DVectorModel, f: FeatureMatrix) -> Embedding:
    if f.dim * (sum(model.context) + 1) != model.input_dim:
        raise EmbeddingError(f"feature dim {f.dim} does not match model input {model.input_dim}")
    return Embedding(f.utt_id, "d", dvector_from_stacked(model, model.stack(f)), model.model_hash())


# ----------------------------------------------------------- sequence models


@dataclass
class SVectorConfig:
    bidirectional: bool = False
    head_weights: dict[str, float] = field(default_factory=lambda: {"speaker": 1.0, "text": 1.0})
    dev_sessions: int = 1
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(epochs=30, batch=32, optimizer="rmsprop", lr=2e-3, patience=6, grad_clip=5.0)
    )


class SequenceNet:
    """LSTM (uni- or bidirectional) with a speaker head and a text head.

    With ``aux_dim > 0`` the speaker head reads ``[lstm_out ; aux]``; the text
    head always reads ``lstm_out`` alone.
    """

    heads = ("speaker", "text")

    def __init__(
        self,
        cells: list[LstmCell],
        speaker_head: SoftmaxHead,
        text_head: SoftmaxHead,
        aux_dim: int = 0,
        head_weights: dict[str, float] | None = None,
    ):
        if len(cells) not in (1, 2):
            raise ValueError("expected one (uni) or two (bi) LSTM cells")
        self.cells = cells
        self.speaker_head = speaker_head
        self.text_head = text_head
        self.aux_dim = aux_dim
        self.head_weights = head_weights or {"speaker": 1.0, "text": 1.0}
        if speaker_head.n_in != self.out_dim + aux_dim or text_head.n_in != self.out_dim:
            raise ValueError("head input dims do not match the LSTM output")

    @classmethod
    def init(cls, rng: Rng, n_in: int, hidden: int, n_speakers: int, n_text: int, bidirectional: bool, aux_dim: int = 0, head_weights=None):
        cells = [LstmCell.init(rng.child("fwd"), n_in, hidden)]
        if bidirectional:
            cells.append(LstmCell.init(rng.child("bwd"), n_in, hidden))
        out = hidden * len(cells)
        return cls(
            cells,
            SoftmaxHead.init(rng.child("speaker"), out + aux_dim, n_speakers),
            SoftmaxHead.init(rng.child("text"), out, n_text),
            aux_dim,
            head_weights,
        )

    @property
    def bidirectional(self) -> bool:
        return len(self.cells) == 2

    @property
    def hidden(self) -> int:
        return self.cells[0].hidden

    @property
    def out_dim(self) -> int:
        return self.hidden * len(self.cells)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for name, cell in zip(("fwd", "bwd"), self.cells):
            for n, p in cell.params().items():
                out[f"{name}.{n}"] = p
        for n, p in self.speaker_head.params().items():
            out[f"speaker.{n}"] = p
        for n, p in self.text_head.params().items():
            out[f"text.{n}"] = p
        return out

    def encode(self, seqs: list[np.ndarray], keep_cache: bool = False):
        X, lengths = pad_sequences(seqs)
        h, cache = self.cells[0].forward(X, lengths)
        outs, caches = [h], [cache]
        if self.bidirectional:
            hb, cache_b = self.cells[1].forward(reverse_padded(X, lengths), lengths)
            outs.append(hb)
            caches.append(cache_b)
        out = np.concatenate(outs, axis=1)
        return (out, caches) if keep_cache else out

    def _speaker_input(self, out: np.ndarray, aux: np.ndarray | None) -> np.ndarray:
        if self.aux_dim == 0:
            return out
        if aux is None or aux.shape != (len(out), self.aux_dim):
            raise EmbeddingError(f"speaker head needs an auxiliary input of dim {self.aux_dim}")
        return np.concatenate([out, aux], axis=1)

    def logits(self, seqs: list[np.ndarray], aux: np.ndarray | None = None) -> dict[str, np.ndarray]:
        out = self.encode(seqs)
        spk_in = self._speaker_input(out, aux)
        return {
            "speaker": spk_in @ self.speaker_head.W.T + self.speaker_head.b,
            "text": out @ self.text_head.W.T + self.text_head.b,
        }

    def loss_and_grads(self, inputs, labels):
        seqs, aux = inputs
        out, caches = self.encode(seqs, keep_cache=True)
        ws, wt = self.head_weights["speaker"], self.head_weights["text"]
        ls, dspk, gs = softmax_ce(self.speaker_head, self._speaker_input(out, aux), labels["speaker"])
        lt, dtxt, gt = softmax_ce(self.text_head, out, labels["text"])
        dout = ws * dspk[:, : self.out_dim] + wt * dtxt
        grads = {f"speaker.{n}": ws * v for n, v in gs.items()}
        grads.update({f"text.{n}": wt * v for n, v in gt.items()})
        H = self.hidden
        for k, (name, cell) in enumerate(zip(("fwd", "bwd"), self.cells)):
            g, _ = cell.backward(caches[k], dout[:, k * H : (k + 1) * H])
            grads.update({f"{name}.{n}": v for n, v in g.items()})
        return ws * ls + wt * lt, grads

    def predict(self, inputs):
        seqs, aux = inputs
        return {k: np.argmax(v, axis=1) for k, v in self.logits(seqs, aux).items()}


@dataclass
class SVectorModel:
    net: SequenceNet
    norm: FeatureNorm
    speakers: list[str]
    n_text: int
    history: TrainResult | None = None

    @property
    def dim(self) -> int:
        return self.net.out_dim

    def model_hash(self) -> str:
        return params_hash(self.net.params())


@dataclass
class IsVectorModel(SVectorModel):
    ivec_dim: int = 0

    @property
    def dim(self) -> int:
        return self.net.out_dim + self.ivec_dim


def _sequence_data(norm: FeatureNorm, feats, metas, idx, spk, aux):
    seqs = [norm(feats[k].frames) for k in idx]
    A = None if aux is None else aux[idx]
    labels = {
        "speaker": np.array([spk[metas[k].speaker_id] for k in idx]),
        "text": np.array([metas[k].sentence_id for k in idx]),
    }

    def fetch(rows):
        return [seqs[r] for r in rows], (None if A is None else A[rows])

    return ClassifierData(len(seqs), fetch, labels)


def _train_sequence(feats, metas, hidden, cfg: SVectorConfig, rng: Rng, aux: np.ndarray | None):
    if not feats:
        raise EmbeddingError("no background utterances")
    spk = _label_map(m.speaker_id for m in metas)
    n_text = max(m.sentence_id for m in metas) + 1
    norm = FeatureNorm.fit(feats)
    aux_dim = 0 if aux is None else aux.shape[1]
    net = SequenceNet.init(rng.child("init"), feats[0].dim, hidden, len(spk), n_text, cfg.bidirectional, aux_dim, dict(cfg.head_weights))
    tr, dv = _split_dev(metas, cfg.dev_sessions)
    train = _sequence_data(norm, feats, metas, tr, spk, aux)
    dev = _sequence_data(norm, feats, metas, dv, spk, aux)
    # early stopping watches the speaker head, the primary verification target
    hist = train_classifier(net, train, dev, cfg.train, rng.child("train"), monitor="speaker")
    return net, norm, sorted(spk), n_text, hist


def train_svector(feats, metas, hidden: int, cfg: SVectorConfig, rng: Rng) -> SVectorModel:
    net, norm, speakers, n_text, hist = _train_sequence(feats, metas, hidden, cfg, rng, None)
    log.info("s-vector H=%d: best speaker dev acc %.4f at epoch %d", hidden, hist.best_dev, hist.best_epoch)
    return SVectorModel(net, norm, speakers, n_text, hist)


def train_isvector(feats, metas, ivectors: dict[str, np.ndarray], hidden: int, cfg: SVectorConfig, rng: Rng) -> IsVectorModel:
    missing = [m.utt_id for m in metas if m.utt_id not in ivectors]
    if missing:
        raise EmbeddingError(f"missing i-vector for {len(missing)} utterances (first: {missing[0]})")
    aux = np.stack([np.asarray(ivectors[m.utt_id], dtype=np.float64) for m in metas])
    net, norm, speakers, n_text, hist = _train_sequence(feats, metas, hidden, cfg, rng, aux)
    log.info("i-s-vector H=%d: best speaker dev acc %.4f at epoch %d", hidden, hist.best_dev, hist.best_epoch)
    return IsVectorModel(net, norm, speakers, n_text, hist, aux.shape[1])


def lstm_outputs(model: SVectorModel, feats: Sequence[FeatureMatrix], batch: int = 64) -> np.ndarray:
    """LSTM outputs for many utterances, batched by length; rows follow input order."""
    out = np.empty((len(feats), model.net.out_dim))
    order = sorted(range(len(feats)), key=lambda k: (feats[k].n_frames, k))
    for start in range(0, len(order), batch):
        rows = order[start : start + batch]
        out[rows] = model.net.encode([model.norm(feats[k].frames) for k in rows])
    return out


def extract_svector(model: SVectorModel, f: FeatureMatrix) -> Embedding:
    return Embedding(f.utt_id, "s", lstm_outputs(model, [f])[0], model.model_hash())


def extract_isvector(model: IsVectorModel, f: FeatureMatrix, ivec: np.ndarray) -> Embedding:
    ivec = np.asarray(ivec, dtype=np.float64).ravel()
    if ivec.size != model.ivec_dim:
        raise EmbeddingError(f"i-vector dim {ivec.size} != model i-vector dim {model.ivec_dim}")
    return Embedding(f.utt_id, "is", np.concatenate([lstm_outputs(model, [f])[0], ivec]), model.model_hash())


# ---------------------------------------------------------------- extractors


class Extractor(Protocol):
    kind: str

    @property
    def dim(self) -> int: ...

    def model_hash(self) -> str: ...

    def embed(self, feats: Sequence[FeatureMatrix]) -> np.ndarray: ...


class IVectorExtractor:
    kind = "i"

    def __init__(self, tv: TvModel):
        self.tv = tv

    @property
    def ubm(self) -> GmmUbm:
        return self.tv.ubm

    @property
    def dim(self) -> int:
        return self.tv.rank

    def model_hash(self) -> str:
        return params_hash({"T": self.tv.T, "means": self.ubm.means})

    def embed(self, feats):
        return np.stack([extract_ivector(self.tv, accumulate_stats(self.ubm, f)).w for f in feats])


class DVectorExtractor:
    kind = "d"

    def __init__(self, model: DVectorModel):
        self.model = model

    @property
    def dim(self) -> int:
        return self.model.dim

    def model_hash(self) -> str:
        return self.model.model_hash()

    def embed(self, feats):
        return np.stack([extract_dvector(self.model, f).values for f in feats])


class SVectorExtractor:
    kind = "s"

    def __init__(self, model: SVectorModel):
        self.model = model

    @property
    def dim(self) -> int:
        return self.model.dim

    def model_hash(self) -> str:
        return self.model.model_hash()

    def embed(self, feats):
        return lstm_outputs(self.model, list(feats))


class IsVectorExtractor:
    kind = "is"

    def __init__(self, model: IsVectorModel, ivectors: IVectorExtractor):
        if ivectors.dim != model.ivec_dim:
            raise EmbeddingError("i-vector extractor dim does not match the i-s model")
        self.model = model
        self.ivectors = ivectors

    @property
    def dim(self) -> int:
        return self.model.dim

    def model_hash(self) -> str:
        return self.model.model_hash()

    def embed(self, feats):
        feats = list(feats)
        return np.concatenate([lstm_outputs(self.model, feats), self.ivectors.embed(feats)], axis=1)


class ConcatExtractor:
    kind = "concat"

    def __init__(self, first: Extractor, second: Extractor):
        self.first = first
        self.second = second

    @property
    def dim(self) -> int:
        return self.first.dim + self.second.dim

    def model_hash(self) -> str:
        return f"{self.first.model_hash()}+{self.second.model_hash()}"

    def embed(self, feats):
        feats = list(feats)
        return np.concatenate([self.first.embed(feats), self.second.embed(feats)], axis=1)


# ----------------------------------------------------------------- persistence


def _norm_tensors(norm: FeatureNorm) -> dict[str, np.ndarray]:
    return {"norm.mean": norm.mean, "norm.std": norm.std}


def save_ubm(path, ubm: GmmUbm, meta: dict | None = None) -> None:
    save_emdl(
        path,
        {"arch": "ubm", "C": ubm.n_components, "D": ubm.dim, **(meta or {})},
        {"weights": ubm.weights, "means": ubm.means, "variances": ubm.variances},
    )


def _ubm_from(t: dict[str, np.ndarray], prefix: str = "") -> GmmUbm:
    w = t[prefix + "weights"]
    return GmmUbm(w / w.sum(), t[prefix + "means"], t[prefix + "variances"])


def load_ubm(path) -> GmmUbm:
    meta, t = load_emdl(path)
    if meta.get("arch") != "ubm":
        raise EmbeddingError(f"{path}: not a UBM container")
    return _ubm_from(t)


def save_tv(path, tv: TvModel, meta: dict | None = None) -> None:
    ubm = tv.ubm
    save_emdl(
        path,
        {"arch": "tv", "R": tv.rank, "C": ubm.n_components, "D": ubm.dim, **(meta or {})},
        {"T": tv.T, "ubm.weights": ubm.weights, "ubm.means": ubm.means, "ubm.variances": ubm.variances},
    )


def load_tv(path) -> TvModel:
    meta, t = load_emdl(path)
    if meta.get("arch") != "tv":
        raise EmbeddingError(f"{path}: not a TV container")
    return TvModel(t["T"], _ubm_from(t, "ubm."))


def save_dvector(path, model: DVectorModel, meta: dict | None = None) -> None:
    tensors = _norm_tensors(model.norm)
    tensors.update(model.net.params())
    save_emdl(
        path,
        {
            "arch": "dvector",
            "context": list(model.context),
            "sizes": [model.net.layers[0].n_in] + [l.n_out for l in model.net.layers],
            "activation": model.net.layers[0].activation,
            "speakers": model.speakers,
            "dim": model.dim,
            **(meta or {}),
        },
        tensors,
    )


def load_dvector(path) -> DVectorModel:
    meta, t = load_emdl(path)
    if meta.get("arch") != "dvector":
        raise EmbeddingError(f"{path}: not a d-vector container")
    n_layers = len(meta["sizes"]) - 1
    layers = [DenseLayer(t[f"dense{k}.W"], t[f"dense{k}.b"], meta["activation"]) for k in range(n_layers)]
    net = MLP(layers, SoftmaxHead(t["out.W"], t["out.b"]), head="speaker")
    return DVectorModel(net, FeatureNorm(t["norm.mean"], t["norm.std"]), tuple(meta["context"]), list(meta["speakers"]))


def save_sequence(path, model: SVectorModel, meta: dict | None = None) -> None:
    tensors = _norm_tensors(model.norm)
    tensors.update(model.net.params())
    is_model = isinstance(model, IsVectorModel)
    save_emdl(
        path,
        {
            "arch": "isvector" if is_model else "svector",
            "hidden": model.net.hidden,
            "bidirectional": model.net.bidirectional,
            "ivec_dim": model.ivec_dim if is_model else 0,
            "n_text": model.n_text,
            "speakers": model.speakers,
            "head_weights": model.net.head_weights,
            **(meta or {}),
        },
        tensors,
    )


def load_sequence(path) -> SVectorModel:
    meta, t = load_emdl(path)
    arch = meta.get("arch")
    if arch not in ("svector", "isvector"):
        raise EmbeddingError(f"{path}: not a sequence-model container")
    cells = [LstmCell(t[f"{n}.Wx"], t[f"{n}.Wh"], t[f"{n}.b"]) for n in (("fwd", "bwd") if meta["bidirectional"] else ("fwd",))]
    net = SequenceNet(
        cells,
        SoftmaxHead(t["speaker.W"], t["speaker.b"]),
        SoftmaxHead(t["text.W"], t["text.b"]),
        int(meta["ivec_dim"]),
        dict(meta["head_weights"]),
    )
    norm = FeatureNorm(t["norm.mean"], t["norm.std"])
    if arch == "isvector":
        return IsVectorModel(net, norm, list(meta["speakers"]), int(meta["n_text"]), None, int(meta["ivec_dim"]))
    return SVectorModel(net, norm, list(meta["speakers"]), int(meta["n_text"]))


def config_dict(cfg) -> dict:
    return asdict(cfg)
