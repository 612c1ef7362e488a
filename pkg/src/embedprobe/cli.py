"""Command-line front end: corpus -> UBM -> TV -> networks -> embeddings -> probes/TDSV -> report.

Every command reads and writes artifacts under ``--out``. Each run appends a
record (input/output hashes, wall time, seed) to ``run_log.jsonl``; inputs
whose hash no longer matches the producing step are rejected.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import ConfigError, RunConfig, dump_config, load_config
from .corpus import CorpusError, Manifest, generate_corpus, read_manifest
from .embeddings import (
    ConcatExtractor,
    DVectorExtractor,
    EmbeddingError,
    IsVectorExtractor,
    IVectorExtractor,
    SVectorExtractor,
    load_dvector,
    load_sequence,
    load_tv,
    load_ubm,
    read_eemb,
    save_dvector,
    save_sequence,
    save_tv,
    save_ubm,
    train_dvector,
    train_isvector,
    train_svector,
    write_eemb,
)
from .evaluation import TrialError, eer_by_condition, gen_trials, read_trials, score_trials, write_scores, write_trials
from .gmm import accumulate_stats, train_ubm
from .ivector import train_tv
from .nnet import ContainerError, config_hash
from .numerics import NumericError, Rng
from .probing import TASK_NAMES, ProbeError, ProbeReport, append_csv, read_csv, run_probe

log = logging.getLogger("embedprobe")

EXIT_OK, EXIT_ARGS, EXIT_ARTIFACT, EXIT_NUMERIC = 0, 2, 3, 4
RUN_LOG = "run_log.jsonl"
KIND_CHOICES = ("i", "d", "s", "s-bi", "is", "is-bi", "concat")

# published reference EERs (%) per condition, kept for context only
REFERENCE_EER_PERCENT = {
    "i": {"I": 0.35, "II": 1.13, "III": 0.06},
    "concat": {"I": 0.28, "II": 1.13, "III": 0.03},
    "is": {"I": 0.17, "II": 1.98, "III": 0.03},
    "is-bi": {"I": 0.11, "II": 1.72, "III": 0.02},
}


class ArtifactError(RuntimeError):
    pass


# ------------------------------------------------------------------ helpers


def file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def tree_hash(path: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(path.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(path)).encode())
            h.update(file_hash(p).encode())
    return h.hexdigest()


def artifact_hash(path: Path) -> str:
    return tree_hash(path) if path.is_dir() else file_hash(path)


class Run:
    """Context for one command: config, output root, run-log bookkeeping."""

    def __init__(self, out: Path, cfg: RunConfig, command: str, argv: Sequence[str]):
        self.out = out
        self.cfg = cfg
        self.command = command
        self.argv = list(argv)
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.t0 = time.time()
        self.rng = Rng(cfg.seed)

    def path(self, rel: str) -> Path:
        return self.out / rel

    def _recorded(self) -> dict[str, str]:
        produced: dict[str, str] = {}
        log_path = self.out / RUN_LOG
        if log_path.exists():
            with open(log_path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        produced.update(json.loads(line).get("outputs", {}))
        return produced

    def need(self, *rels: str) -> None:
        recorded = self._recorded()
        for rel in rels:
            p = self.path(rel)
            if not p.exists():
                raise ArtifactError(f"missing input artifact {rel} (run the producing command first)")
            h = artifact_hash(p)
            if rel in recorded and recorded[rel] != h:
                raise ArtifactError(f"input artifact {rel} does not match the hash recorded in {RUN_LOG}")
            self.inputs[rel] = h

    def produced(self, rel: str) -> None:
        self.outputs[rel] = artifact_hash(self.path(rel))

    def finish(self) -> None:
        record = {
            "step": self.command,
            "argv": self.argv,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_time": round(time.time() - self.t0, 3),
            "seed": self.cfg.seed,
            "config_hash": config_hash(dump_config(self.cfg)),
        }
        with open(self.out / RUN_LOG, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def manifest(self) -> Manifest:
        self.need("corpus/manifest.jsonl", "corpus/feats")
        return read_manifest(self.path("corpus/manifest.jsonl"))


def _subset(manifest: Manifest, name: str):
    metas = manifest.subset(name)
    return metas, manifest.load_many(metas)


def _dims(arg: str | None, default: int) -> list[int]:
    if not arg:
        return [default]
    try:
        return [int(x) for x in arg.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --dims value {arg!r}") from exc


def _embed_chunk(args):
    extractor, feats = args
    return extractor.embed(feats)


def embed_all(extractor, feats, jobs: int = 1, chunk: int = 256) -> np.ndarray:
    """Embed in fixed-order chunks; with ``jobs > 1`` the chunks run in worker processes."""
    chunks = [feats[k : k + chunk] for k in range(0, len(feats), chunk)]
    if jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_embed_chunk, [(extractor, c) for c in chunks]))
    else:
        parts = [extractor.embed(c) for c in chunks]
    return np.concatenate(parts) if parts else np.zeros((0, extractor.dim))


# ------------------------------------------------------------- artifact names


def seq_model_rel(kind: str, dim: int) -> str:
    base = {"s": "svector", "s-bi": "svector-bi", "is": "isvector", "is-bi": "isvector-bi"}[kind]
    return f"models/{base}-{dim}.emdl"


def emb_rel(kind: str, dim: int) -> str:
    return f"embeddings/{kind}-{dim}.eemb"


def load_extractor(run: Run, kind: str, dim: int):
    """Build an extractor for ``kind`` at nominal dimension ``dim`` from saved models."""
    if kind == "i":
        rel = f"models/tv-{dim}.emdl"
        run.need(rel)
        return IVectorExtractor(load_tv(run.path(rel)))
    if kind == "d":
        rel = f"models/dvector-{dim}.emdl"
        run.need(rel)
        return DVectorExtractor(load_dvector(run.path(rel)))
    if kind in ("s", "s-bi"):
        rel = seq_model_rel(kind, dim)
        run.need(rel)
        return SVectorExtractor(load_sequence(run.path(rel)))
    if kind in ("is", "is-bi"):
        rel = seq_model_rel(kind, dim)
        run.need(rel)
        model = load_sequence(run.path(rel))
        return IsVectorExtractor(model, load_extractor(run, "i", model.ivec_dim))
    if kind == "concat":
        return ConcatExtractor(load_extractor(run, "i", run.cfg.tv.dim), load_extractor(run, "s", dim))
    raise ConfigError(f"unknown kind {kind!r}; expected one of {', '.join(KIND_CHOICES)}")


def load_embeddings(run: Run, kind: str, dim: int) -> dict[str, np.ndarray]:
    if kind == "concat":
        a = load_embeddings(run, "i", run.cfg.tv.dim)
        b = load_embeddings(run, "s", dim)
        return {u: np.concatenate([a[u], b[u]]) for u in a if u in b}
    rel = emb_rel(kind, dim)
    run.need(rel)
    ids, values = read_eemb(run.path(rel))
    return dict(zip(ids, values))


def default_dim(cfg: RunConfig, kind: str) -> int:
    return {
        "i": cfg.tv.dim,
        "d": cfg.dvector.dim,
        "s": cfg.svector.dim,
        "s-bi": cfg.svector.dim,
        "is": cfg.isvector.dim,
        "is-bi": cfg.isvector.dim,
        "concat": cfg.svector.dim,
    }[kind]


# ----------------------------------------------------------------- commands


def cmd_corpus_gen(run: Run, args) -> None:
    generate_corpus(run.cfg.corpus, run.path("corpus"))
    run.produced("corpus/manifest.jsonl")
    run.produced("corpus/feats")


def cmd_ubm_train(run: Run, args) -> None:
    manifest = run.manifest()
    _, feats = _subset(manifest, "bkg")
    c = run.cfg.ubm
    ubm = train_ubm(feats, c.components, c.iters, run.rng.child("ubm"), c.kmeans_frames)
    run.path("models").mkdir(exist_ok=True)
    save_ubm(run.path("models/ubm.emdl"), ubm, {"llh": ubm.train_llh})
    run.produced("models/ubm.emdl")


def cmd_tv_train(run: Run, args) -> None:
    manifest = run.manifest()
    run.need("models/ubm.emdl")
    ubm = load_ubm(run.path("models/ubm.emdl"))
    _, feats = _subset(manifest, "bkg")
    stats = [accumulate_stats(ubm, f) for f in feats]
    for dim in _dims(args.dims, run.cfg.tv.dim):
        tv = train_tv(ubm, stats, dim, run.cfg.tv.iters, run.rng.child("tv"))
        rel = f"models/tv-{dim}.emdl"
        save_tv(run.path(rel), tv, {"objective": tv.train_objective})
        run.produced(rel)


def _extract_cmd(run: Run, args, kind: str) -> None:
    manifest = run.manifest()
    feats = manifest.load_many(manifest.utts)
    ids = [u.utt_id for u in manifest.utts]
    run.path("embeddings").mkdir(exist_ok=True)
    for dim in _dims(args.dims, default_dim(run.cfg, kind)):
        extractor = load_extractor(run, kind, dim)
        E = embed_all(extractor, feats, args.jobs)
        rel = emb_rel(kind, dim)
        write_eemb(run.path(rel), ids, E)
        run.produced(rel)


def cmd_dvector_train(run: Run, args) -> None:
    manifest = run.manifest()
    metas, feats = _subset(manifest, "bkg")
    run.path("models").mkdir(exist_ok=True)
    for dim in _dims(args.dims, run.cfg.dvector.dim):
        model = train_dvector(feats, metas, dim, run.cfg.dvector.build(), run.rng.child(f"nnet/dvector-{dim}"))
        rel = f"models/dvector-{dim}.emdl"
        save_dvector(run.path(rel), model, {"train_loss": model.history.loss_curve, "dev_acc": model.history.dev_curve})
        run.produced(rel)


def cmd_svector_train(run: Run, args) -> None:
    manifest = run.manifest()
    metas, feats = _subset(manifest, "bkg")
    run.path("models").mkdir(exist_ok=True)
    sec = run.cfg.svector
    bi = args.bidirectional or sec.bidirectional
    kind = "s-bi" if bi else "s"
    for dim in _dims(args.dims, sec.dim):
        scfg = sec.build()
        scfg.bidirectional = bi
        model = train_svector(feats, metas, dim, scfg, run.rng.child(f"nnet/{kind}-{dim}"))
        rel = seq_model_rel(kind, dim)
        save_sequence(run.path(rel), model, {"train_loss": model.history.loss_curve, "dev_acc": model.history.dev_curve})
        run.produced(rel)


def cmd_isvector_train(run: Run, args) -> None:
    manifest = run.manifest()
    metas, feats = _subset(manifest, "bkg")
    sec = run.cfg.isvector
    ivec_dim = args.ivec_dim or sec.ivec_dim or run.cfg.tv.dim
    ivecs = load_embeddings(run, "i", ivec_dim)
    bi = args.bidirectional or sec.bidirectional
    kind = "is-bi" if bi else "is"
    run.path("models").mkdir(exist_ok=True)
    for dim in _dims(args.dims, sec.dim):
        scfg = sec.build()
        scfg.bidirectional = bi
        model = train_isvector(feats, metas, ivecs, dim, scfg, run.rng.child(f"nnet/{kind}-{dim}"))
        rel = seq_model_rel(kind, dim)
        save_sequence(run.path(rel), model, {"train_loss": model.history.loss_curve, "dev_acc": model.history.dev_curve})
        run.produced(rel)


def _probe_job(job):
    task, kind, dim, manifest, cfg, seed, emb, extractor = job
    utts = manifest.subset("eval")
    return run_probe(task, utts, cfg, Rng(seed), extractor, manifest.load, emb, kind, dim, manifest.config.vocab_size)


def cmd_probe_run(run: Run, args) -> None:
    tasks = list(TASK_NAMES) if args.task == "all" else [args.task]
    kinds = args.kind.split(",") if args.kind else list(run.cfg.probe.kinds)
    for k in kinds:
        if k not in KIND_CHOICES:
            raise ConfigError(f"unknown kind {k!r}; expected one of {', '.join(KIND_CHOICES)}")
    manifest = run.manifest()
    pcfg = run.cfg.probe.build()
    jobs = []
    for kind in kinds:
        for dim in _dims(args.dims, default_dim(run.cfg, kind)):
            extractor = load_extractor(run, kind, dim)
            emb = load_embeddings(run, kind, dim)
            for task in tasks:
                jobs.append((task, kind, dim, manifest, pcfg, run.cfg.seed, emb, extractor))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_probe_job, jobs))
    else:
        reports = [_probe_job(j) for j in jobs]
    run.path("reports").mkdir(exist_ok=True)
    append_csv(run.path("reports/probes.csv"), reports)
    _update_probe_json(run.path("reports/probes.json"), reports)
    run.produced("reports/probes.csv")
    for r in reports:
        print(f"{r.task}\t{r.kind}\t{r.dim}\t{r.accuracy:.4f}\t(chance {r.baseline:.4f})")


def _update_probe_json(path: Path, reports: Sequence[ProbeReport]) -> None:
    data = json.loads(path.read_text()) if path.exists() else {"probes": []}
    for r in reports:
        row = r.row()
        row["dev_accuracy"] = r.dev_accuracy
        data["probes"].append(row)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def cmd_trials_gen(run: Run, args) -> None:
    manifest = run.manifest()
    trials = gen_trials(manifest.subset("eval"), run.cfg.trials, run.rng.child("trials"))
    run.path("trials").mkdir(exist_ok=True)
    write_trials(run.path("trials/trials.txt"), trials)
    run.produced("trials/trials.txt")


def cmd_tdsv_score(run: Run, args) -> None:
    manifest = run.manifest()
    run.need("trials/trials.txt")
    trials = read_trials(run.path("trials/trials.txt"), {u.utt_id: u for u in manifest.utts})
    kinds = args.kinds.split(",") if args.kinds else ["i", "concat", "is"]
    run.path("scores").mkdir(exist_ok=True)
    run.path("reports").mkdir(exist_ok=True)
    eer_path = run.path("reports/eer.json")
    results = json.loads(eer_path.read_text()) if eer_path.exists() else {}
    for kind in kinds:
        if kind not in KIND_CHOICES:
            raise ConfigError(f"unknown kind {kind!r}; expected one of {', '.join(KIND_CHOICES)}")
        for dim in _dims(args.dims, default_dim(run.cfg, kind)):
            emb = load_embeddings(run, kind, dim)
            scores = score_trials(trials, emb)
            rel = f"scores/{kind}-{dim}.scores"
            write_scores(run.path(rel), trials, scores)
            run.produced(rel)
            eers = eer_by_condition(trials, scores)
            results[f"{kind}-{dim}"] = {
                "kind": kind,
                "dim": dim,
                "conditions": {c: {"eer": r.eer, "threshold": r.threshold, "n_target": r.n_target, "n_impostor": r.n_impostor} for c, r in eers.items()},
            }
            print(f"{kind}-{dim}\t" + "\t".join(f"{c}:{100 * r.eer:.2f}%" for c, r in eers.items()))
    eer_path.write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    run.produced("reports/eer.json")


def cmd_report(run: Run, args) -> None:
    run.need("reports/probes.csv")
    rows = read_csv(run.path("reports/probes.csv"))
    latest: dict[tuple[str, str, int], dict] = {}
    for r in rows:
        latest[(r["task"], r["kind"], int(r["dim"]))] = r
    if args.tasks is None:
        tasks = list(run.cfg.probe.tasks)
    elif args.tasks == "all":
        tasks = list(TASK_NAMES)
    else:
        tasks = args.tasks.split(",")
        bad = [t for t in tasks if t not in TASK_NAMES]
        if bad:
            raise ConfigError(f"invalid task(s) {bad}; valid tasks: {', '.join(TASK_NAMES)}")
    kinds = args.kinds.split(",") if args.kinds else list(run.cfg.probe.kinds)
    requested = []
    for kind in kinds:
        for dim in _dims(args.dims, default_dim(run.cfg, kind)):
            for task in tasks:
                requested.append((task, kind, dim))
    missing = [k for k in requested if k not in latest]
    if missing:
        raise ArtifactError(f"probe results missing for {len(missing)} requested rows (first: {missing[0]})")
    summary_rows = [latest[k] for k in requested]
    eer = {}
    if run.path("reports/eer.json").exists():
        run.need("reports/eer.json")
        eer = json.loads(run.path("reports/eer.json").read_text())
    out_csv = run.path("reports/summary.csv")
    with open(out_csv, "w", encoding="utf-8") as fh:
        fh.write("task,kind,dim,accuracy,baseline,n_train,n_test,seed\n")
        for r in summary_rows:
            fh.write(",".join(str(r[k]) for k in ("task", "kind", "dim", "accuracy", "baseline", "n_train", "n_test", "seed")) + "\n")
    summary = {"probes": summary_rows, "tdsv": eer, "reference_eer_percent": REFERENCE_EER_PERCENT, "seed": run.cfg.seed}
    run.path("reports/summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    run.produced("reports/summary.csv")
    run.produced("reports/summary.json")
    print(f"{len(summary_rows)} probe rows, {len(eer)} TDSV systems -> {out_csv}")


COMMANDS: dict[str, Callable] = {
    "corpus-gen": cmd_corpus_gen,
    "ubm-train": cmd_ubm_train,
    "tv-train": cmd_tv_train,
    "ivector-extract": lambda run, args: _extract_cmd(run, args, "i"),
    "dvector-train": cmd_dvector_train,
    "dvector-extract": lambda run, args: _extract_cmd(run, args, "d"),
    "svector-train": cmd_svector_train,
    "svector-extract": lambda run, args: _extract_cmd(run, args, "s-bi" if args.bidirectional else "s"),
    "isvector-train": cmd_isvector_train,
    "isvector-extract": lambda run, args: _extract_cmd(run, args, "is-bi" if args.bidirectional else "is"),
    "probe-run": cmd_probe_run,
    "trials-gen": cmd_trials_gen,
    "tdsv-score": cmd_tdsv_score,
    "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, type=Path, help="artifact root directory")
    common.add_argument("--config", type=Path, help="key = value run configuration")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for extraction / probe runs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="embedprobe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name in ("tv-train", "ivector-extract", "dvector-train", "dvector-extract", "svector-train", "svector-extract", "isvector-train", "isvector-extract", "probe-run", "tdsv-score", "report"):
            sp.add_argument("--dims", help="comma-separated embedding dimensions")
        if name in ("svector-train", "svector-extract", "isvector-train", "isvector-extract"):
            sp.add_argument("--bidirectional", action="store_true")
        if name == "isvector-train":
            sp.add_argument("--ivec-dim", type=int)
        if name == "probe-run":
            sp.add_argument("--task", required=True, type=_task_arg, help=f"one of {', '.join(TASK_NAMES)} or 'all'")
            sp.add_argument("--kind", help=f"comma-separated kinds from {', '.join(KIND_CHOICES)}")
        if name == "tdsv-score":
            sp.add_argument("--kinds", help="comma-separated kinds (default i,concat,is)")
        if name == "report":
            sp.add_argument("--tasks", help="comma-separated tasks or 'all'")
            sp.add_argument("--kinds", help="comma-separated kinds")
    return p


def _task_arg(value: str) -> str:
    if value != "all" and value not in TASK_NAMES:
        raise argparse.ArgumentTypeError(f"invalid task {value!r}; valid tasks: {', '.join(TASK_NAMES)} (or 'all')")
    return value


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        args.out.mkdir(parents=True, exist_ok=True)
        if cfg.isvector.ivec_dim is None:
            cfg.isvector.ivec_dim = cfg.tv.dim
        (args.out / "config.effective.txt").write_text(dump_config(cfg), encoding="utf-8")
        run = Run(args.out, cfg, args.command, argv)
        COMMANDS[args.command](run, args)
        run.finish()
    except ConfigError as exc:
        print(f"embedprobe: configuration error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (ArtifactError, CorpusError, ContainerError, EmbeddingError, TrialError, FileNotFoundError) as exc:
        print(f"embedprobe: artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"embedprobe: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ProbeError as exc:
        print(f"embedprobe: probe error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
