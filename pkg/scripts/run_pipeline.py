"""Run every CLI step in order and print per-step wall time.

Usage: python3 scripts/run_pipeline.py OUT [--config FILE] [--jobs N]
Without --config the built-in defaults (the pinned fixture) are used.
"""

import argparse
import sys
import time

from embedprobe.cli import main

STEPS = [
    ["corpus-gen"],
    ["ubm-train"],
    ["tv-train"],
    ["ivector-extract"],
    ["dvector-train"],
    ["dvector-extract"],
    ["svector-train"],
    ["svector-extract"],
    ["isvector-train"],
    ["isvector-extract"],
    ["trials-gen"],
    ["probe-run", "--task", "all", "--kind", "i,d,s,is"],
    ["tdsv-score", "--kinds", "i,concat,is"],
    ["report", "--tasks", "all", "--kinds", "i,d,s,is"],
]


def run(out: str, config: str | None = None, jobs: int = 1) -> dict[str, float]:
    common = ["--out", out, "--jobs", str(jobs)]
    if config:
        common += ["--config", config]
    times = {}
    for step in STEPS:
        t0 = time.perf_counter()
        code = main([*step, *common])
        times[step[0]] = time.perf_counter() - t0
        print(f"{step[0]:<18} exit={code} {times[step[0]]:7.1f}s", flush=True)
        if code != 0:
            raise SystemExit(code)
    return times


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--config")
    ap.add_argument("--jobs", type=int, default=1)
    a = ap.parse_args()
    total = sum(run(a.out, a.config, a.jobs).values())
    print(f"total {total:.1f}s", file=sys.stderr)
