"""Run configuration: a flat ``key = value`` file with ``[section]`` headers.

Keys may also be written fully qualified (``tv.dim = 100``). Unknown keys are
errors. ``seed`` lives at top level and seeds every named substream.
"""

from __future__ import annotations

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import CorpusConfig
from .embeddings import DVectorConfig, SVectorConfig
from .evaluation import TrialConfig
from .nnet import TrainConfig
from .probing import TASK_NAMES, ProbeConfig

SEED_ENV = "EMBEDPROBE_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class UbmSection:
    components: int = 64
    iters: int = 20
    kmeans_frames: int = 50000


@dataclass
class TvSection:
    dim: int = 100
    iters: int = 5


@dataclass
class DVectorSection:
    dim: int = 128
    context_left: int = 5
    context_right: int = 5
    hidden: tuple[int, ...] = (256, 256, 256)
    activation: str = "sigmoid"
    optimizer: str = "sgd"
    lr: float = 2.0
    epochs: int = 6
    batch: int = 256
    patience: int = 3
    max_batches_per_epoch: int = 600

    def build(self) -> DVectorConfig:
        return DVectorConfig(
            context=(self.context_left, self.context_right),
            hidden=tuple(self.hidden),
            activation=self.activation,
            train=TrainConfig(
                epochs=self.epochs,
                batch=self.batch,
                optimizer=self.optimizer,
                lr=self.lr,
                patience=self.patience,
                max_batches_per_epoch=self.max_batches_per_epoch,
            ),
        )


@dataclass
class SVectorSection:
    dim: int = 128
    bidirectional: bool = False
    optimizer: str = "rmsprop"
    lr: float = 2e-3
    epochs: int = 8
    batch: int = 32
    patience: int = 4
    grad_clip: float | None = 5.0
    speaker_weight: float = 1.0
    text_weight: float = 1.0

    def build(self) -> SVectorConfig:
        return SVectorConfig(
            bidirectional=self.bidirectional,
            head_weights={"speaker": self.speaker_weight, "text": self.text_weight},
            train=TrainConfig(
                epochs=self.epochs,
                batch=self.batch,
                optimizer=self.optimizer,
                lr=self.lr,
                patience=self.patience,
                grad_clip=self.grad_clip,
            ),
        )


@dataclass
class IsVectorSection(SVectorSection):
    ivec_dim: int | None = None  # defaults to tv.dim


@dataclass
class ProbeSection(ProbeConfig):
    tasks: tuple[str, ...] = TASK_NAMES
    kinds: tuple[str, ...] = ("i", "d", "s", "is")

    def build(self) -> ProbeConfig:
        names = {f.name for f in dataclasses.fields(ProbeConfig)}
        return ProbeConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})


@dataclass
class RunConfig:
    seed: int = 42
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    ubm: UbmSection = field(default_factory=UbmSection)
    tv: TvSection = field(default_factory=TvSection)
    dvector: DVectorSection = field(default_factory=DVectorSection)
    svector: SVectorSection = field(default_factory=SVectorSection)
    isvector: IsVectorSection = field(default_factory=IsVectorSection)
    probe: ProbeSection = field(default_factory=ProbeSection)
    trials: TrialConfig = field(default_factory=TrialConfig)

    def sections(self) -> dict[str, object]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "seed"}


def _coerce(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if raw.strip().lower() in ("none", "null", ""):
            if type(None) in args:
                return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(raw, inner[0], key)
    if origin is tuple:
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        elem = args[0] if args else str
        return tuple(_coerce(p, elem, key) for p in parts)
    if origin is dict:
        raise ConfigError(f"{key}: dict-valued keys are not configurable")
    try:
        if tp is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw.strip())
        if tp is float:
            return float(raw.strip())
        if tp is str:
            return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw.strip()!r} as {getattr(tp, '__name__', tp)}") from exc
    raise ConfigError(f"{key}: unsupported type {tp}")


def _field_types(obj) -> dict[str, object]:
    hints = typing.get_type_hints(type(obj))
    return {f.name: hints[f.name] for f in dataclasses.fields(obj) if not f.name.startswith("_")}


def set_key(cfg: RunConfig, key: str, raw: str) -> None:
    if key == "seed":
        cfg.seed = _coerce(raw, int, key)
        return
    if "." not in key:
        raise ConfigError(f"unknown key {key!r} (keys outside a section must be 'seed')")
    section, name = key.split(".", 1)
    sections = cfg.sections()
    if section not in sections:
        raise ConfigError(f"unknown section {section!r}; expected one of {sorted(sections)}")
    obj = sections[section]
    types_ = _field_types(obj)
    if name not in types_:
        raise ConfigError(f"unknown key {key!r}")
    setattr(obj, name, _coerce(raw, types_[name], key))


def parse_config(text: str, cfg: RunConfig | None = None) -> RunConfig:
    cfg = cfg or RunConfig()
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip() or None
            if section is not None and section not in cfg.sections():
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if section is not None and "." not in key:
            key = f"{section}.{key}"
        try:
            set_key(cfg, key, raw)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return cfg


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    lines = [f"seed = {cfg.seed}"]
    for name, obj in cfg.sections().items():
        lines.append("")
        lines.append(f"[{name}]")
        for key in _field_types(obj):
            lines.append(f"{key} = {_fmt(getattr(obj, key))}")
    return "\n".join(lines) + "\n"


def load_config(path: str | os.PathLike | None, env: dict | None = None) -> RunConfig:
    env = os.environ if env is None else env
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = parse_config(text, cfg)
    if env.get(SEED_ENV):
        cfg.seed = _coerce(env[SEED_ENV], int, SEED_ENV)
    cfg.corpus.seed = cfg.seed
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    from .corpus import CorpusError

    try:
        cfg.corpus.validate()
    except CorpusError as exc:
        raise ConfigError(str(exc)) from exc
    bad = [t for t in cfg.probe.tasks if t not in TASK_NAMES]
    if bad:
        raise ConfigError(f"unknown probe tasks {bad}; valid tasks: {', '.join(TASK_NAMES)}")
    for name, value in (("ubm.components", cfg.ubm.components), ("tv.dim", cfg.tv.dim), ("dvector.dim", cfg.dvector.dim), ("svector.dim", cfg.svector.dim), ("isvector.dim", cfg.isvector.dim)):
        if value < 1:
            raise ConfigError(f"{name} must be >= 1")
