from __future__ import annotations

from collections import OrderedDict
from pathlib import Path

import pytest

from nctreduce.features import features_from_document
from nctreduce.kern import read_kern

MINICORPUS = Path(__file__).resolve().parents[1] / "src" / "nctreduce" / "data" / "minicorpus"
GOLDEN = Path(__file__).resolve().parent / "golden"

_CRITERIA: "OrderedDict[int, dict]" = OrderedDict()


@pytest.fixture(scope="session")
def minicorpus_files():
    return sorted(MINICORPUS.glob("*.krn"))


@pytest.fixture(scope="session")
def minicorpus_rows(minicorpus_files):
    rows = []
    for path in minicorpus_files:
        rows += features_from_document(read_kern(path), path.stem)
    return rows


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            number, title = marker.args
            item.user_properties.append(("criterion", (number, title)))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when != "call" and not (report.skipped or report.failed):
        return
    number, title = crit
    entry = _CRITERIA.setdefault(number, {"title": title, "outcomes": []})
    entry["outcomes"].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        outcomes = entry["outcomes"]
        if any(o == "failed" for o in outcomes):
            status = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {number:>2} [{status}] {entry['title']}")
