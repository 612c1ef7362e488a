from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
TINY_CONFIG = ROOT / "scripts" / "tiny.cfg"

PIPELINE = [
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


@pytest.fixture(scope="session")
def tiny_config():
    return TINY_CONFIG


# one line per acceptance criterion, printed at the end of the session
CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    CRITERIA[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
