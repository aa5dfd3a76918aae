from __future__ import annotations

import csv
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"

# published per-bone plane differences (prediction - truth) for the six teams
TABLE4_TEAMS = ("SN", "MH", "EK", "CW", "SV", "BM")


def load_table4() -> tuple[dict[str, int], dict[str, dict[str, int]]]:
    with open(DATA / "table4_truth.csv", newline="") as fh:
        truths = {r["volume_id"]: int(r["gppi"]) for r in csv.DictReader(fh)}
    preds: dict[str, dict[str, int]] = {}
    with open(DATA / "table4_predictions.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            preds.setdefault(r["method"], {})[r["volume_id"]] = int(r["gppi_pred"])
    return truths, preds


@pytest.fixture(scope="session")
def table4():
    return load_table4()


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict line: criterion(number, passed, detail)."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        request.config.stash[_LINES].append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
