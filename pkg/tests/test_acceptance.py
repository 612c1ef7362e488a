"""Acceptance suite. Each test records one PASS/FAIL line per criterion.

The pinned fixture is the built-in default configuration (seed 42). Building it
takes a while on one core; set ``EMBEDPROBE_FIXTURE_DIR`` to a directory that
already holds a complete default-config run to reuse it.
"""

import json
import os
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import PIPELINE, TINY_CONFIG, record_criterion
from test_evaluation import brute_force_eer
from test_ivector import frame_log_posterior, grid_argmax, planted_stats, principal_angles_deg, toy_model
from test_nnet import check_block

from embedprobe.cli import Run, artifact_hash, load_extractor, main
from embedprobe.config import RunConfig
from embedprobe.corpus import FeatureMatrix, read_manifest
from embedprobe.embeddings import SequenceNet, dvector_from_stacked, lstm_outputs
from embedprobe.evaluation import compute_eer
from embedprobe.gmm import accumulate_stats, train_ubm
from embedprobe.ivector import extract_ivector, train_tv
from embedprobe.nnet import MLP, DenseLayer, LstmCell, SoftmaxHead, sigmoid_bce, softmax_ce
from embedprobe.numerics import Rng, solve_spd

pytestmark = pytest.mark.slow


def _log(out: Path) -> list[dict]:
    return [json.loads(line) for line in (out / "run_log.jsonl").read_text().splitlines() if line.strip()]


def _step_time(out: Path, *steps: str) -> float:
    return sum(r["wall_time"] for r in _log(out) if r["step"] in steps)


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    reuse = os.environ.get("EMBEDPROBE_FIXTURE_DIR")
    if reuse and (Path(reuse) / "reports/summary.json").exists():
        return Path(reuse)
    out = tmp_path_factory.mktemp("fixture")
    for step in PIPELINE:
        assert main([*step, "--out", str(out)]) == 0, step
    return out


def _cli(args: list[str]) -> int:
    return subprocess.run([sys.executable, "-m", "embedprobe.cli", *args], capture_output=True).returncode


@pytest.fixture(scope="session")
def tiny_runs(tmp_path_factory):
    """Two independent end-to-end runs of the tiny configuration through the command-line entry point."""
    runs = []
    for k in range(2):
        out = tmp_path_factory.mktemp(f"tiny{k}")
        t0 = time.perf_counter()
        codes = {step[0]: _cli([*step, "--out", str(out), "--config", str(TINY_CONFIG)]) for step in PIPELINE}
        runs.append((out, codes, time.perf_counter() - t0))
    return runs


# ------------------------------------------------------------------ 1


def _layer_grad_errors() -> dict[str, float]:
    errs: dict[str, float] = {}
    for act in ("sigmoid", "tanh", "relu", "identity"):
        rng = Rng(100)
        layer = DenseLayer.init(rng.child("l"), 5, 4, act)
        head = SoftmaxHead.init(rng.child("h"), 4, 3)
        x, y = rng.normal(size=(6, 5)), rng.integers(0, 3, size=6)

        def loss():
            return softmax_ce(head, layer.forward(x)[0], y)[0]

        h, cache = layer.forward(x)
        _, dh, g_head = softmax_ce(head, h, y)
        _, g = layer.backward(cache, dh)
        errs[f"dense-{act}"] = max(check_block(loss, layer.W, g["W"]), check_block(loss, layer.b, g["b"]))
        errs[f"softmax-{act}"] = check_block(loss, head.W, g_head["W"])
    rng = Rng(101)
    layer = DenseLayer.init(rng, 4, 3)
    x = rng.normal(size=(6, 4))
    Y = (rng.uniform(size=(6, 3)) > 0.5).astype(float)
    _, dx, g = sigmoid_bce(layer, x, Y)
    f = lambda: sigmoid_bce(layer, x, Y)[0]
    errs["sigmoid-bce"] = max(check_block(f, layer.W, g["W"]), check_block(f, x, dx))

    rng = Rng(102)
    cell = LstmCell.init(rng.child("cell"), 2, 3)
    head = SoftmaxHead.init(rng.child("head"), 3, 4)
    X, lengths, y = rng.normal(size=(3, 5, 2)), np.array([5, 3, 4]), rng.integers(0, 4, size=3)
    loss = lambda: softmax_ce(head, cell.forward(X, lengths)[0], y)[0]
    h, cache = cell.forward(X, lengths)
    grads, _ = cell.backward(cache, softmax_ce(head, h, y)[1])
    errs["lstm"] = max(check_block(loss, p, grads[n]) for n, p in cell.params().items())

    rng = Rng(103)
    mlp = MLP.init(rng, [4, 5, 3], 3, "sigmoid")
    x, labels = rng.normal(size=(6, 4)), {"label": rng.integers(0, 3, size=6)}
    _, grads = mlp.loss_and_grads(x, labels)
    errs["mlp"] = max(check_block(lambda: mlp.loss_and_grads(x, labels)[0], p, grads[n]) for n, p in mlp.params().items())

    rng = Rng(104)
    net = SequenceNet.init(rng, 3, 4, n_speakers=3, n_text=2, bidirectional=True, aux_dim=2)
    seqs, aux = [rng.normal(size=(n, 3)) for n in (5, 3, 4)], rng.normal(size=(3, 2))
    labels = {"speaker": np.array([0, 2, 1]), "text": np.array([1, 0, 1])}
    _, grads = net.loss_and_grads((seqs, aux), labels)
    errs["blstm-multitask"] = max(check_block(lambda: net.loss_and_grads((seqs, aux), labels)[0], p, grads[n]) for n, p in net.params().items())
    return errs


def test_criterion_1_numerical_core():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    X = np.concatenate([rng.normal(loc=k, size=(300, 4)) for k in range(4)])
    llh = np.array(train_ubm(X, 6, 20, Rng(2)).train_llh)
    em_ok = len(llh) == 21 and bool(np.all(np.diff(llh) >= -1e-8 * np.abs(llh[1:])))

    grad_errs = _layer_grad_errors()
    grad_ok = max(grad_errs.values()) < 1e-4

    residual = 0.0
    for n in (1, 5, 20, 60):
        M = rng.normal(size=(n, n))
        A = M @ M.T + n * np.eye(n)
        b = rng.normal(size=n)
        residual = max(residual, np.linalg.norm(A @ solve_spd(A, b) - b) / max(1.0, np.linalg.norm(b)))
    solve_ok = residual < 1e-8

    tgt, imp = rng.normal(1.0, 1.0, size=1000), rng.normal(0.0, 1.0, size=1000)
    eer_gap = abs(compute_eer(tgt, imp).eer - brute_force_eer(list(tgt), list(imp)))
    eer_ok = eer_gap <= 1e-12
    elapsed = time.perf_counter() - t0

    ok = em_ok and grad_ok and solve_ok and eer_ok and elapsed < 120
    record_criterion(
        1,
        ok,
        f"em_monotone={em_ok} max_grad_rel={max(grad_errs.values()):.1e} solve_residual={residual:.1e} "
        f"eer_gap={eer_gap:.1e} time={elapsed:.1f}s",
    )
    assert ok


# ------------------------------------------------------------------ 2


def test_criterion_2_ivector():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        tv, rng = toy_model(seed=seed)
        X = rng.normal(size=(40, 3)) + tv.ubm.means[seed % 2]
        w = extract_ivector(tv, accumulate_stats(tv.ubm, X)).w
        oracle = grid_argmax(lambda v: frame_log_posterior(tv, X, v), np.zeros(2))
        worst = max(worst, float(np.max(np.abs(w - oracle))))
    ubm, T_star, stats = planted_stats()
    angle = float(np.max(principal_angles_deg(train_tv(ubm, stats, 2, 10, Rng(5)).T, T_star)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and angle < 5.0 and elapsed < 120
    record_criterion(2, ok, f"map_max_dev={worst:.1e} planted_angle={angle:.2f}deg time={elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 3


def test_criterion_3_architecture(fixture_dir):
    run = Run(fixture_dir, RunConfig(), "acceptance", [])
    manifest = read_manifest(fixture_dir / "corpus/manifest.jsonl")
    metas = manifest.subset("eval")
    feats = manifest.load_many(metas)

    dext = load_extractor(run, "d", run.cfg.dvector.dim)
    dmodel = dext.model
    rng = np.random.default_rng(3)
    perm_dev = 0.0
    for f in feats[:50]:
        stacked = dmodel.stack(f)
        ref = dvector_from_stacked(dmodel, stacked)
        for _ in range(100):
            perm_dev = max(perm_dev, float(np.max(np.abs(dvector_from_stacked(dmodel, stacked[rng.permutation(len(stacked))]) - ref))))

    smodel = load_extractor(run, "s", run.cfg.svector.dim).model
    rev = [FeatureMatrix(f.utt_id, f.frames[::-1].copy()) for f in feats]
    diff = np.linalg.norm(lstm_outputs(smodel, feats) - lstm_outputs(smodel, rev), axis=1)
    reversed_frac = float(np.mean(diff > 1e-6))

    isext = load_extractor(run, "is", run.cfg.isvector.dim)
    E = isext.embed(feats)
    H = isext.model.net.out_dim
    slice_ok = bool(np.array_equal(E[:, :H], lstm_outputs(isext.model, feats)) and np.array_equal(E[:, H:], isext.ivectors.embed(feats)))

    ok = perm_dev < 1e-9 and reversed_frac >= 0.95 and slice_ok
    record_criterion(3, ok, f"dvector_perm_dev={perm_dev:.1e} svector_reversed_differs={reversed_frac:.3f} is_slice_exact={slice_ok}")
    assert ok


# ------------------------------------------------------------------ 4


def _probe_table(out: Path) -> dict[tuple[str, str], float]:
    rows = json.loads((out / "reports/summary.json").read_text())["probes"]
    return {(r["task"], r["kind"]): float(r["accuracy"]) for r in rows}


def test_criterion_4_probing(fixture_dir):
    acc = _probe_table(fixture_dir)
    probe_time = _step_time(fixture_dir, "probe-run")
    checks = {
        "order_d_chance": abs(acc["order", "d"] - 0.5) <= 0.05,
        "order_s_high": acc["order", "s"] >= 0.90,
        "order_i_below_s": acc["order", "i"] <= acc["order", "s"] - 0.20,
        "text_i_high": acc["text", "i"] >= 0.90,
        "text_s_high": acc["text", "s"] >= 0.90,
        "speaker_i_ge_s": acc["speaker", "i"] >= acc["speaker", "s"],
        "channel_above_chance": all(acc["channel", k] >= 1 / 6 + 0.10 for k in ("i", "d", "s")),
        "runtime": probe_time < 20 * 60,
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    shown = " ".join(f"{t}/{k}={acc[t, k]:.3f}" for t in ("order", "text", "speaker", "channel") for k in ("i", "d", "s"))
    record_criterion(4, ok, f"{shown} probe_time={probe_time:.0f}s failed={failed}")
    assert ok, failed


# ------------------------------------------------------------------ 5


def test_criterion_5_tdsv(fixture_dir):
    eer = json.loads((fixture_dir / "reports/eer.json").read_text())
    cfg = RunConfig()
    i = eer[f"i-{cfg.tv.dim}"]["conditions"]
    s = eer[f"is-{cfg.isvector.dim}"]["conditions"]
    n_imp = {c: s[c]["n_impostor"] for c in ("I", "II", "III")}
    runtime = _step_time(fixture_dir, "trials-gen", "tdsv-score")
    summary = json.loads((fixture_dir / "reports/summary.json").read_text())
    checks = {
        "trials_per_condition": all(v == 200 for v in n_imp.values()),
        "cond_I_halved": s["I"]["eer"] <= 0.5 * i["I"]["eer"],
        "cond_III_not_worse": s["III"]["eer"] <= i["III"]["eer"],
        "reference_recorded": summary["reference_eer_percent"]["i"]["I"] == 0.35,
        "runtime": runtime < 10 * 60,
    }
    ok = all(checks.values())
    record_criterion(
        5,
        ok,
        f"EER I: i={100 * i['I']['eer']:.2f}% is={100 * s['I']['eer']:.2f}%  III: i={100 * i['III']['eer']:.2f}% "
        f"is={100 * s['III']['eer']:.2f}%  time={runtime:.0f}s failed={[k for k, v in checks.items() if not v]}",
    )
    assert ok


# ------------------------------------------------------------------ 6


def test_criterion_6_determinism(tiny_runs):
    (a, codes_a, _), (b, codes_b, _) = tiny_runs
    assert all(c == 0 for c in codes_a.values()) and all(c == 0 for c in codes_b.values())
    files = sorted(p.relative_to(a) for p in (a / "embeddings").glob("*.eemb"))
    files += [Path("reports/probes.csv"), Path("reports/summary.csv")]
    differing = [str(p) for p in files if artifact_hash(a / p) != artifact_hash(b / p)]
    ok = len(files) > 2 and not differing
    record_criterion(6, ok, f"compared={len(files)} differing={differing}")
    assert ok


# ------------------------------------------------------------------ 7


def test_criterion_7_smoke(tiny_runs, tmp_path):
    out, codes, elapsed = tiny_runs[0]
    failed = [s for s, c in codes.items() if c != 0]
    # the remaining options of the CLI surface on a copy of the tiny run
    copy = tmp_path / "extra"
    shutil.copytree(out, copy)
    base = ["--out", str(copy), "--config", str(TINY_CONFIG)]
    t0 = time.perf_counter()
    extra = {
        "svector-train --bidirectional": _cli(["svector-train", "--bidirectional", *base]),
        "svector-extract --bidirectional": _cli(["svector-extract", "--bidirectional", *base]),
        "tdsv-score s-bi": _cli(["tdsv-score", "--kinds", "s-bi", *base]),
    }
    elapsed += time.perf_counter() - t0
    failed += [k for k, c in extra.items() if c != 0]
    ok = not failed and elapsed < 5 * 60
    record_criterion(7, ok, f"commands={len(codes) + len(extra)} failed={failed} time={elapsed:.1f}s")
    assert ok
