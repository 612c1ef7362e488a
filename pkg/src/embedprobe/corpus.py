"""Synthetic text-dependent speech corpus with controllable latent factors.

Each utterance is a fixed sentence (an ordered word sequence) rendered as a
39-dim frame trajectory: per-word smooth templates, plus a speaker offset, a
gender shift on the first dims, a per-channel diagonal affine map and i.i.d.
frame noise. Every factor is labeled in the manifest so probing tasks have
exact ground truth.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from scipy.interpolate import CubicSpline

from .numerics import Rng

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"EFEA"
FEATURE_VERSION = 1
RATE_FACTORS = {0.5: "slow", 1.0: "normal", 1.5: "fast"}
SUBSETS = ("bkg", "dev", "eval")
GENDER_DIMS = 5


class CorpusError(ValueError):
    pass


@dataclass
class CorpusConfig:
    feature_dim: int = 39
    n_bkg_speakers: int = 60
    n_dev_speakers: int = 0
    n_eval_speakers: int = 40
    n_sentences: int = 12
    vocab_size: int = 40
    words_per_sentence: tuple[int, int] = (4, 6)
    sessions_per_sentence: int = 6
    n_channels: int = 6
    word_len_range: tuple[int, int] = (6, 12)
    speaker_scale: float = 0.5
    channel_scale: float = 0.5
    noise_scale: float = 1.0
    gender_shift: float = 1.0
    frame_rate: float = 100.0
    pad_frames: int = 5
    seed: int = 42

    def validate(self) -> None:
        counts = {
            "feature_dim": self.feature_dim,
            "n_sentences": self.n_sentences,
            "vocab_size": self.vocab_size,
            "sessions_per_sentence": self.sessions_per_sentence,
        }
        for name, value in counts.items():
            if value < 1:
                raise CorpusError(f"{name} must be >= 1 (got {value})")
        for name in ("n_bkg_speakers", "n_dev_speakers", "n_eval_speakers"):
            if getattr(self, name) < 0:
                raise CorpusError(f"{name} must be >= 0")
        if self.n_bkg_speakers + self.n_dev_speakers + self.n_eval_speakers < 1:
            raise CorpusError("corpus needs at least one speaker")
        if self.n_channels < 2:
            raise CorpusError("n_channels must be >= 2")
        lo, hi = self.word_len_range
        if lo < 2 or hi < lo:
            raise CorpusError(f"invalid word_len_range {self.word_len_range}")
        wlo, whi = self.words_per_sentence
        if wlo < 1 or whi < wlo or whi > self.vocab_size:
            raise CorpusError(f"invalid words_per_sentence {self.words_per_sentence}")
        for name in ("speaker_scale", "channel_scale", "noise_scale", "gender_shift"):
            if getattr(self, name) < 0:
                raise CorpusError(f"{name} must be >= 0")
        if self.frame_rate <= 0:
            raise CorpusError("frame_rate must be positive")
        if self.pad_frames < 0:
            raise CorpusError("pad_frames must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise CorpusError("seed must fit in u64")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["words_per_sentence"] = list(self.words_per_sentence)
        d["word_len_range"] = list(self.word_len_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        d = dict(d)
        for key in ("words_per_sentence", "word_len_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class FeatureMatrix:
    utt_id: str
    frames: np.ndarray
    frame_rate: float = 100.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise CorpusError(f"{self.utt_id}: frames must be a non-empty T x D matrix")
        if not np.all(np.isfinite(frames)):
            raise CorpusError(f"{self.utt_id}: non-finite feature values")
        self.frames = frames

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration(self) -> float:
        return self.n_frames / self.frame_rate


@dataclass
class UttMeta:
    utt_id: str
    speaker_id: str
    gender: str
    sentence_id: int
    word_ids: list[int]
    channel_id: int
    rate_class: str
    duration_s: float
    subset: str
    path: str
    session: int = 0

    def to_json(self) -> dict:
        return {
            "utt_id": self.utt_id,
            "speaker_id": self.speaker_id,
            "gender": self.gender,
            "sentence_id": self.sentence_id,
            "word_ids": list(self.word_ids),
            "channel_id": self.channel_id,
            "rate_class": self.rate_class,
            "duration_s": self.duration_s,
            "subset": self.subset,
            "path": self.path,
            "session": self.session,
        }


@dataclass
class Manifest:
    utts: list[UttMeta]
    sentences: dict[int, list[int]]
    speakers: dict[str, str]
    config: CorpusConfig
    root: Path | None = None
    _index: dict[str, UttMeta] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {}
        for u in self.utts:
            if u.utt_id in self._index:
                raise CorpusError(f"duplicate utt_id {u.utt_id}")
            self._index[u.utt_id] = u

    def __len__(self) -> int:
        return len(self.utts)

    def __iter__(self) -> Iterator[UttMeta]:
        return iter(self.utts)

    def __getitem__(self, utt_id: str) -> UttMeta:
        return self._index[utt_id]

    def __contains__(self, utt_id: str) -> bool:
        return utt_id in self._index

    def subset(self, name: str) -> list[UttMeta]:
        return [u for u in self.utts if u.subset == name]

    def speakers_in(self, subset: str) -> list[str]:
        return sorted({u.speaker_id for u in self.utts if u.subset == subset})

    def feature_path(self, u: UttMeta) -> Path:
        if self.root is None:
            raise CorpusError("manifest has no root directory")
        return self.root / u.path

    def load(self, u: UttMeta | str) -> FeatureMatrix:
        if isinstance(u, str):
            u = self[u]
        return read_features(self.feature_path(u), u.utt_id, self.config.frame_rate)

    def load_many(self, utts: Iterable[UttMeta]) -> list[FeatureMatrix]:
        return [self.load(u) for u in utts]

    def check(self) -> None:
        """Verify file existence, duration consistency and subset speaker-disjointness."""
        owner: dict[str, str] = {}
        for u in self.utts:
            prev = owner.setdefault(u.speaker_id, u.subset)
            if prev != u.subset:
                raise CorpusError(f"speaker {u.speaker_id} appears in {prev} and {u.subset}")
            if self.root is not None and not self.feature_path(u).exists():
                raise CorpusError(f"missing feature file for {u.utt_id}")
            if not u.word_ids:
                raise CorpusError(f"{u.utt_id}: empty word sequence")
            if list(self.sentences[u.sentence_id]) != list(u.word_ids):
                raise CorpusError(f"{u.utt_id}: word_ids disagree with sentence table")


# ---------------------------------------------------------------- feature I/O


def write_features(path: str | os.PathLike, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    T, D = frames.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, D, T))
        fh.write(frames.tobytes())


def read_features(path: str | os.PathLike, utt_id: str | None = None, frame_rate: float = 100.0) -> FeatureMatrix:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != FEATURE_MAGIC:
            raise CorpusError(f"{path}: not an EFEA feature file")
        version, D, T = struct.unpack("<III", head[4:])
        if version != FEATURE_VERSION:
            raise CorpusError(f"{path}: unsupported feature file version {version}")
        payload = fh.read()
    if len(payload) != 4 * T * D:
        raise CorpusError(f"{path}: truncated payload ({len(payload)} bytes, expected {4 * T * D})")
    frames = np.frombuffer(payload, dtype="<f4").reshape(T, D).astype(np.float32)
    return FeatureMatrix(utt_id or path.stem, frames, frame_rate)


def write_manifest(path: str | os.PathLike, manifest: Manifest) -> None:
    header = {
        "type": "header",
        "version": 1,
        "config": manifest.config.to_dict(),
        "sentences": {str(k): list(v) for k, v in sorted(manifest.sentences.items())},
        "speakers": dict(sorted(manifest.speakers.items())),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for u in manifest.utts:
            fh.write(json.dumps(u.to_json()) + "\n")


def read_manifest(path: str | os.PathLike) -> Manifest:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [line for line in fh if line.strip()]
    except OSError as exc:
        raise CorpusError(f"cannot read manifest {path}: {exc}") from exc
    if not lines:
        raise CorpusError(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
        if header.get("type") != "header":
            raise CorpusError(f"{path}: first line is not a header")
        utts = []
        for line in lines[1:]:
            d = json.loads(line)
            utts.append(UttMeta(**d))
    except (json.JSONDecodeError, TypeError) as exc:
        raise CorpusError(f"{path}: malformed manifest: {exc}") from exc
    return Manifest(
        utts=utts,
        sentences={int(k): list(v) for k, v in header["sentences"].items()},
        speakers=dict(header["speakers"]),
        config=CorpusConfig.from_dict(header["config"]),
        root=path.parent,
    )


# ----------------------------------------------------------------- generation


@dataclass
class _Tables:
    sentences: dict[int, list[int]]
    templates: list[np.ndarray]  # per word, (L_w, D) with L_w fixed per corpus
    speaker_ids: list[str]
    subsets: list[str]
    genders: list[str]
    offsets: np.ndarray
    channel_gain: np.ndarray
    channel_offset: np.ndarray
    session_channels: np.ndarray  # (n_speakers, sessions)


def _make_sentences(cfg: CorpusConfig, rng: Rng) -> dict[int, list[int]]:
    lo, hi = cfg.words_per_sentence
    seen: set[tuple[int, ...]] = set()
    sentences: dict[int, list[int]] = {}
    for s in range(cfg.n_sentences):
        for _ in range(1000):
            n = int(rng.integers(lo, hi + 1))
            words = tuple(int(w) for w in rng.choice(cfg.vocab_size, size=n, replace=False))
            if words not in seen:
                break
        else:
            raise CorpusError("cannot draw distinct sentences; enlarge vocab_size or words_per_sentence")
        seen.add(words)
        sentences[s] = list(words)
    return sentences


def _make_tables(cfg: CorpusConfig) -> _Tables:
    root = Rng(cfg.seed).child("corpus")
    sentences = _make_sentences(cfg, root.child("sentences"))

    trng = root.child("templates")
    knots_x = np.linspace(0.0, 1.0, 4)
    lo, hi = cfg.word_len_range
    templates = []
    for _ in range(cfg.vocab_size):
        spline = CubicSpline(knots_x, trng.normal(size=(4, cfg.feature_dim)), axis=0)
        n = int(trng.integers(lo, hi + 1))
        templates.append(spline(np.linspace(0.0, 1.0, n)))

    n_spk = cfg.n_bkg_speakers + cfg.n_dev_speakers + cfg.n_eval_speakers
    srng = root.child("speakers")
    subsets = ["bkg"] * cfg.n_bkg_speakers + ["dev"] * cfg.n_dev_speakers + ["eval"] * cfg.n_eval_speakers
    genders: list[str] = []
    for name, n in (("bkg", cfg.n_bkg_speakers), ("dev", cfg.n_dev_speakers), ("eval", cfg.n_eval_speakers)):
        g = np.array(["F"] * (n // 2) + ["M"] * (n - n // 2))
        genders.extend(str(x) for x in srng.permutation(g))
    offsets = srng.normal(scale=cfg.speaker_scale, size=(n_spk, cfg.feature_dim)) if n_spk else np.zeros((0, cfg.feature_dim))

    crng = root.child("channels")
    u = crng.uniform(-1.0, 1.0, size=(cfg.n_channels, cfg.feature_dim))
    channel_gain = 1.0 + 0.2 * min(cfg.channel_scale, 1.0) * u
    channel_offset = crng.normal(scale=cfg.channel_scale, size=(cfg.n_channels, cfg.feature_dim))
    session_channels = crng.integers(0, cfg.n_channels, size=(n_spk, cfg.sessions_per_sentence))

    return _Tables(
        sentences=sentences,
        templates=templates,
        speaker_ids=[f"spk{i:03d}" for i in range(n_spk)],
        subsets=subsets,
        genders=genders,
        offsets=offsets,
        channel_gain=channel_gain,
        channel_offset=channel_offset,
        session_channels=session_channels,
    )


def _render(cfg: CorpusConfig, tab: _Tables, spk: int, sentence: int, channel: int, rng: Rng) -> np.ndarray:
    clean = np.concatenate([tab.templates[w] for w in tab.sentences[sentence]], axis=0)
    clean = clean + tab.offsets[spk]
    sign = 1.0 if tab.genders[spk] == "M" else -1.0
    clean[:, : min(GENDER_DIMS, cfg.feature_dim)] += sign * cfg.gender_shift
    speech = tab.channel_gain[channel] * clean + tab.channel_offset[channel]
    speech = speech + rng.normal(scale=cfg.noise_scale, size=speech.shape) if cfg.noise_scale > 0 else speech
    pad = cfg.pad_frames
    if pad:
        lead = rng.normal(scale=cfg.noise_scale, size=(pad, cfg.feature_dim)) if cfg.noise_scale > 0 else np.zeros((pad, cfg.feature_dim))
        tail = rng.normal(scale=cfg.noise_scale, size=(pad, cfg.feature_dim)) if cfg.noise_scale > 0 else np.zeros((pad, cfg.feature_dim))
        speech = np.concatenate([lead, speech, tail], axis=0)
    return speech.astype(np.float32)


def synthesize(cfg: CorpusConfig) -> tuple[Manifest, list[FeatureMatrix]]:
    """Generate the corpus in memory; returns the manifest (no root) and features in manifest order."""
    cfg.validate()
    tab = _make_tables(cfg)
    urng = Rng(cfg.seed).child("corpus/utterances")
    utts: list[UttMeta] = []
    feats: list[FeatureMatrix] = []
    for spk, spk_id in enumerate(tab.speaker_ids):
        for sentence in range(cfg.n_sentences):
            for sess in range(cfg.sessions_per_sentence):
                channel = int(tab.session_channels[spk, sess])
                frames = _render(cfg, tab, spk, sentence, channel, urng)
                subset = tab.subsets[spk]
                utt_id = f"{subset}-{spk_id}-t{sentence:02d}-r{sess}"
                fm = FeatureMatrix(utt_id, frames, cfg.frame_rate)
                utts.append(
                    UttMeta(
                        utt_id=utt_id,
                        speaker_id=spk_id,
                        gender=tab.genders[spk],
                        sentence_id=sentence,
                        word_ids=list(tab.sentences[sentence]),
                        channel_id=channel,
                        rate_class="normal",
                        duration_s=fm.n_frames / cfg.frame_rate,
                        subset=subset,
                        path=f"feats/{utt_id}.fea",
                        session=sess,
                    )
                )
                feats.append(fm)
    manifest = Manifest(
        utts=utts,
        sentences=tab.sentences,
        speakers=dict(zip(tab.speaker_ids, tab.genders)),
        config=cfg,
    )
    return manifest, feats


def generate_corpus(cfg: CorpusConfig, out_dir: str | os.PathLike) -> Manifest:
    out = Path(out_dir)
    try:
        (out / "feats").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CorpusError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise CorpusError(f"output directory {out} is not writable")
    manifest, feats = synthesize(cfg)
    for u, fm in zip(manifest.utts, feats):
        write_features(out / u.path, fm.frames)
    write_manifest(out / "manifest.jsonl", manifest)
    manifest.root = out
    log.info("wrote %d utterances to %s", len(manifest), out)
    return manifest


# ---------------------------------------------------------- frame transforms


def context_indices(T: int, left: int, right: int) -> np.ndarray:
    """(T, left+1+right) frame indices of each context window, edges replicated."""
    if left < 0 or right < 0:
        raise ValueError("context sizes must be non-negative")
    offs = np.arange(-left, right + 1)
    return np.clip(np.arange(T)[:, None] + offs[None, :], 0, T - 1)


def stack_context(f: FeatureMatrix | np.ndarray, left: int, right: int) -> np.ndarray:
    frames = f.frames if isinstance(f, FeatureMatrix) else np.asarray(f)
    T, D = frames.shape
    idx = context_indices(T, left, right)
    return frames[idx].reshape(T, D * (left + 1 + right))


def perturb_rate(f: FeatureMatrix, factor: float) -> FeatureMatrix:
    """Feature-domain speed change: 0.5 duplicates every frame, 1.5 keeps frames round(1.5k)."""
    if factor not in RATE_FACTORS:
        raise ValueError(f"unsupported rate factor {factor}; expected one of {sorted(RATE_FACTORS)}")
    if factor == 1.0:
        return FeatureMatrix(f.utt_id, f.frames.copy(), f.frame_rate)
    if factor == 0.5:
        frames = np.repeat(f.frames, 2, axis=0)
    else:
        n = max(1, int(np.floor(f.n_frames / 1.5)))
        idx = np.floor(1.5 * np.arange(n) + 0.5).astype(int)
        frames = f.frames[idx]
    return FeatureMatrix(f"{f.utt_id}~x{factor}", frames, f.frame_rate)


def concat_utterances(a: FeatureMatrix, b: FeatureMatrix) -> FeatureMatrix:
    if a.dim != b.dim:
        raise CorpusError(f"feature dimension mismatch: {a.dim} vs {b.dim}")
    if a.frame_rate != b.frame_rate:
        raise CorpusError(f"frame rate mismatch: {a.frame_rate} vs {b.frame_rate}")
    return FeatureMatrix(f"{a.utt_id}+{b.utt_id}", np.concatenate([a.frames, b.frames], axis=0), a.frame_rate)
