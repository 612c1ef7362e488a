"""A small numpy neural stack with hand-written backward passes.

Everything is batched: dense layers take ``(B, in)``; the LSTM takes padded
``(B, T, I)`` sequences plus per-row lengths and freezes the state of a row
once its sequence has ended, so the returned state is each row's own final
hidden state.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import numpy as np

from .numerics import NumericError, Rng

log = logging.getLogger(__name__)

ACTIVATIONS = ("sigmoid", "relu", "identity", "tanh")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        return sigmoid(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        return y * (1.0 - y)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - y * y
    return np.ones_like(z)


def glorot(rng: Rng, n_out: int, n_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_out, n_in))


# ---------------------------------------------------------------- layers


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"inconsistent dense shapes W{self.W.shape} b{self.b.shape}")

    @classmethod
    def init(cls, rng: Rng, n_in: int, n_out: int, activation: str = "identity") -> "DenseLayer":
        return cls(glorot(rng, n_out, n_in), np.zeros(n_out), activation)

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        z = x @ self.W.T + self.b
        y = _act(self.activation, z)
        return y, (x, z, y)

    def backward(self, cache: tuple, dy: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        x, z, y = cache
        dz = dy * _act_grad(self.activation, z, y)
        return dz @ self.W, {"W": dz.T @ x, "b": dz.sum(axis=0)}


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    return layer.forward(np.atleast_2d(x))[0]


def dense_backward(layer: DenseLayer, x: np.ndarray, dy: np.ndarray):
    x = np.atleast_2d(x)
    _, cache = layer.forward(x)
    dx, g = layer.backward(cache, np.atleast_2d(dy))
    return dx, g["W"], g["b"]


class SoftmaxHead(DenseLayer):
    """Linear map to ``K`` logits; pair with :func:`softmax_ce`."""

    def __post_init__(self):
        super().__post_init__()
        if self.n_out < 2:
            raise ValueError("softmax head needs K >= 2")

    @classmethod
    def init(cls, rng: Rng, n_in: int, n_out: int, activation: str = "identity") -> "SoftmaxHead":
        return cls(glorot(rng, n_out, n_in), np.zeros(n_out), "identity")


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax_ce(head: SoftmaxHead, x: np.ndarray, labels: np.ndarray | int):
    """Mean cross-entropy over the batch; returns ``(loss, dx, {"W", "b"})``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    K = head.n_out
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"label out of range [0, {K})")
    logits = x @ head.W.T + head.b
    lp = log_softmax(logits)
    B = len(labels)
    loss = -float(np.mean(lp[np.arange(B), labels]))
    dlogits = np.exp(lp)
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    return loss, dlogits @ head.W, {"W": dlogits.T @ x, "b": dlogits.sum(axis=0)}


def sigmoid_bce(layer: DenseLayer, x: np.ndarray, targets: np.ndarray):
    """Independent binary logistic outputs (one per column); mean over rows, summed over outputs."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    z = x @ layer.W.T + layer.b
    # log(1 + exp(-|z|)) formulation
    loss_el = np.maximum(z, 0) - z * Y + np.log1p(np.exp(-np.abs(z)))
    B = len(x)
    loss = float(loss_el.sum() / B)
    dz = (sigmoid(z) - Y) / B
    return loss, dz @ layer.W, {"W": dz.T @ x, "b": dz.sum(axis=0)}


@dataclass
class LstmCell:
    """Gate blocks in ``Wx``/``Wh``/``b`` are ordered (input, forget, output, candidate)."""

    Wx: np.ndarray  # (4H, I)
    Wh: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    def __post_init__(self):
        self.Wx = np.asarray(self.Wx, dtype=np.float64)
        self.Wh = np.asarray(self.Wh, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        H4 = self.Wx.shape[0]
        if H4 % 4 or self.Wh.shape != (H4, H4 // 4) or self.b.shape != (H4,) or H4 == 0:
            raise ValueError("inconsistent LSTM shapes")

    @classmethod
    def init(cls, rng: Rng, n_in: int, hidden: int, forget_bias: float = 1.0) -> "LstmCell":
        Wx = np.concatenate([glorot(rng, hidden, n_in) for _ in range(4)])
        Wh = np.concatenate([glorot(rng, hidden, hidden) for _ in range(4)])
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = forget_bias
        return cls(Wx, Wh, b)

    @property
    def hidden(self) -> int:
        return self.Wh.shape[1]

    @property
    def n_in(self) -> int:
        return self.Wx.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"Wx": self.Wx, "Wh": self.Wh, "b": self.b}

    def _gates(self, z: np.ndarray):
        H = self.hidden
        i = sigmoid(z[..., :H])
        f = sigmoid(z[..., H : 2 * H])
        o = sigmoid(z[..., 2 * H : 3 * H])
        g = np.tanh(z[..., 3 * H :])
        return i, f, o, g

    def forward(self, X: np.ndarray, lengths: np.ndarray | None = None):
        """Run over padded ``X`` (B, T, I); returns final states (B, H) and a BPTT cache."""
        X = np.asarray(X, dtype=np.float64)
        B, T, _ = X.shape
        H = self.hidden
        lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        steps = []
        for t in range(T):
            # same op order as lstm_step so unrolled steps reproduce this exactly
            z = (X[:, t] @ self.Wx.T + self.b) + h @ self.Wh.T
            i, f, o, g = self._gates(z)
            cn = f * c + i * g
            tc = np.tanh(cn)
            hn = o * tc
            m = (t < lengths)[:, None]
            steps.append((h, c, i, f, o, g, tc, m))
            h = np.where(m, hn, h)
            c = np.where(m, cn, c)
        return h, (X, steps)

    def backward(self, cache, dh_final: np.ndarray, need_dx: bool = False):
        X, steps = cache
        B, T, _ = X.shape
        H = self.hidden
        dh = np.asarray(dh_final, dtype=np.float64).copy()
        dc = np.zeros((B, H))
        dZ = np.zeros((B, T, 4 * H))
        dWh = np.zeros_like(self.Wh)
        for t in range(T - 1, -1, -1):
            h_prev, c_prev, i, f, o, g, tc, m = steps[t]
            mf = m.astype(np.float64)
            dhn = dh * mf
            dcn = dc * mf + dhn * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [
                    dcn * g * i * (1.0 - i),
                    dcn * c_prev * f * (1.0 - f),
                    dhn * tc * o * (1.0 - o),
                    dcn * i * (1.0 - g * g),
                ],
                axis=1,
            )
            dZ[:, t] = dz
            dWh += dz.T @ h_prev
            dh = dz @ self.Wh + dh * (1.0 - mf)
            dc = dcn * f + dc * (1.0 - mf)
        dZf = dZ.reshape(B * T, 4 * H)
        grads = {"Wx": dZf.T @ X.reshape(B * T, -1), "Wh": dWh, "b": dZf.sum(axis=0)}
        dX = (dZf @ self.Wx).reshape(X.shape) if need_dx else None
        return grads, dX


def lstm_step(cell: LstmCell, x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
    z = (np.asarray(x_t) @ cell.Wx.T + cell.b) + np.asarray(h_prev) @ cell.Wh.T
    i, f, o, g = cell._gates(z)
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def pad_sequences(seqs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs])
    out = np.zeros((len(seqs), int(lengths.max()), seqs[0].shape[1]))
    for k, s in enumerate(seqs):
        out[k, : len(s)] = s
    return out, lengths


def reverse_padded(X: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Reverse each row in time within its own length; padding stays at the end."""
    B, T = X.shape[:2]
    t = np.arange(T)[None, :]
    idx = np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)
    return X[np.arange(B)[:, None], idx]


# -------------------------------------------------------------- optimizer


@dataclass
class OptimState:
    kind: str = "rmsprop"
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    acc: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


def optimizer_step(state: OptimState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    """In-place update of ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if state.kind == "sgd":
            p -= state.lr * g
        else:
            s = state.acc.get(name)
            if s is None:
                s = state.acc[name] = np.zeros_like(p)
            s *= state.rho
            s += (1.0 - state.rho) * g * g
            p -= state.lr * g / (np.sqrt(s) + state.eps)


# ------------------------------------------------------------------ models


class Trainable(Protocol):
    heads: tuple[str, ...]

    def params(self) -> dict[str, np.ndarray]: ...

    def loss_and_grads(self, inputs: Any, labels: dict[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]: ...

    def predict(self, inputs: Any) -> dict[str, np.ndarray]: ...


class MLP:
    """Dense stack followed by one softmax head named ``head``."""

    def __init__(self, layers: list[DenseLayer], out: SoftmaxHead, head: str = "label"):
        self.layers = layers
        self.out = out
        self.heads = (head,)

    @classmethod
    def init(cls, rng: Rng, sizes: list[int], n_classes: int, activation: str, head: str = "label") -> "MLP":
        layers = [DenseLayer.init(rng.child(f"dense{k}"), sizes[k], sizes[k + 1], activation) for k in range(len(sizes) - 1)]
        return cls(layers, SoftmaxHead.init(rng.child("out"), sizes[-1], n_classes), head)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for k, layer in enumerate(self.layers):
            for n, p in layer.params().items():
                out[f"dense{k}.{n}"] = p
        for n, p in self.out.params().items():
            out[f"out.{n}"] = p
        return out

    def hidden(self, x: np.ndarray, upto: int | None = None) -> np.ndarray:
        upto = len(self.layers) if upto is None else upto
        for layer in self.layers[:upto]:
            x = layer.forward(x)[0]
        return x

    def logits(self, x: np.ndarray) -> np.ndarray:
        h = self.hidden(x)
        return h @ self.out.W.T + self.out.b

    def loss_and_grads(self, x, labels):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        loss, dx, g = softmax_ce(self.out, x, labels[self.heads[0]])
        grads = {f"out.{n}": v for n, v in g.items()}
        for k in range(len(self.layers) - 1, -1, -1):
            dx, g = self.layers[k].backward(caches[k], dx)
            for n, v in g.items():
                grads[f"dense{k}.{n}"] = v
        return loss, grads

    def predict(self, x):
        return {self.heads[0]: np.argmax(self.logits(x), axis=1)}


# ---------------------------------------------------------------- training


class DivergenceError(NumericError):
    pass


@dataclass
class ClassifierData:
    """Indexable training set: ``fetch(idx)`` builds the model input for rows ``idx``."""

    n: int
    fetch: Callable[[np.ndarray], Any]
    labels: dict[str, np.ndarray]

    @classmethod
    def from_arrays(cls, X: Any, labels: dict[str, np.ndarray]) -> "ClassifierData":
        if isinstance(X, list):
            return cls(len(X), lambda idx: [X[i] for i in idx], labels)
        X = np.asarray(X)
        return cls(len(X), lambda idx: X[idx], labels)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch: int = 64
    optimizer: str = "rmsprop"
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    patience: int = 10
    head_weights: dict[str, float] | None = None
    max_batches_per_epoch: int | None = None
    grad_clip: float | None = None
    eval_batch: int = 512


@dataclass
class TrainResult:
    loss_curve: list[float]
    dev_curve: list[float]
    best_epoch: int
    best_dev: float


def accuracy(model: Trainable, data: ClassifierData, head: str | None = None, batch: int = 512) -> float:
    head = head or model.heads[0]
    correct = 0
    for start in range(0, data.n, batch):
        idx = np.arange(start, min(start + batch, data.n))
        pred = model.predict(data.fetch(idx))[head]
        correct += int(np.sum(pred == data.labels[head][idx]))
    return correct / data.n


def train_classifier(
    model: Trainable,
    train: ClassifierData,
    dev: ClassifierData,
    cfg: TrainConfig,
    rng: Rng,
    monitor: str | None = None,
    metric: Callable[[Any], float] | None = None,
) -> TrainResult:
    """Mini-batch training with per-epoch seeded shuffles and dev-accuracy early stopping.

    ``metric(model)`` replaces dev accuracy of the ``monitor`` head when given.
    On return ``model`` holds the parameters of the best dev epoch.
    """
    if train.n == 0 or dev.n == 0:
        raise ValueError("train and dev splits must be non-empty")
    monitor = monitor or model.heads[0]
    opt = OptimState(cfg.optimizer, cfg.lr, cfg.rho, cfg.eps)
    params = model.params()
    best = {k: v.copy() for k, v in params.items()}
    best_dev = -1.0
    best_epoch = -1
    losses: list[float] = []
    devs: list[float] = []
    since = 0
    for epoch in range(cfg.epochs):
        order = rng.child(f"epoch{epoch}").permutation(train.n)
        n_batches = (train.n + cfg.batch - 1) // cfg.batch
        if cfg.max_batches_per_epoch is not None:
            n_batches = min(n_batches, cfg.max_batches_per_epoch)
        total = 0.0
        for k in range(n_batches):
            idx = order[k * cfg.batch : (k + 1) * cfg.batch]
            labels = {h: v[idx] for h, v in train.labels.items()}
            loss, grads = model.loss_and_grads(train.fetch(idx), labels)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}, batch {k}")
            if cfg.grad_clip is not None:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > cfg.grad_clip:
                    grads = {n: g * (cfg.grad_clip / norm) for n, g in grads.items()}
            optimizer_step(opt, params, grads)
            total += loss
        losses.append(total / max(n_batches, 1))
        dev_acc = metric(model) if metric is not None else accuracy(model, dev, monitor, cfg.eval_batch)
        devs.append(dev_acc)
        log.info("epoch %d: train loss %.5f dev acc %.4f", epoch, losses[-1], dev_acc)
        if dev_acc > best_dev:
            best_dev, best_epoch, since = dev_acc, epoch, 0
            best = {k: v.copy() for k, v in params.items()}
        else:
            since += 1
            if since >= cfg.patience:
                break
    for k, v in params.items():
        v[...] = best[k]
    return TrainResult(losses, devs, best_epoch, best_dev)


# --------------------------------------------------------------- container

EMDL_VERSION = 1


def params_hash(tensors: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())
    return h.hexdigest()


def config_hash(cfg: Any) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def save_emdl(path: str | Path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write ``meta`` as a JSON header line followed by named float32 tensors."""
    header = {"format": "EMDL", "version": EMDL_VERSION, **meta}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name, t in tensors.items():
            t = np.ascontiguousarray(t, dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(t.tobytes())


class ContainerError(ValueError):
    pass


def load_emdl(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.find(b"\n")
    if nl < 0:
        raise ContainerError(f"{path}: missing metadata line")
    try:
        meta = json.loads(data[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: bad metadata: {exc}") from exc
    if meta.get("format") != "EMDL":
        raise ContainerError(f"{path}: not an EMDL container")
    tensors: dict[str, np.ndarray] = {}
    pos = nl + 1
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if pos + 4 * count > len(data):
                raise ContainerError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos += 4 * count
    except struct.error as exc:
        raise ContainerError(f"{path}: truncated container") from exc
    return meta, tensors
