import re
from collections import defaultdict

import pytest

CRITERIA = {
    1: "absolute accuracy (substituted by 2-11)",
    2: "gradient integrity",
    3: "shape ledger at 150x112x112",
    4: "HR oracle",
    5: "loss identities",
    6: "optical flow",
    7: "skin label",
    8: "baselines",
    9: "overfit smoke test",
    10: "ablation directionality",
    11: "metrics",
}

_outcomes = defaultdict(list)
_NAME = re.compile(r"test_acceptance\.py::test_c(\d\d)_")


def pytest_runtest_logreport(report):
    m = _NAME.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or report.outcome != "passed":
        _outcomes[int(m.group(1))].append(report.outcome)


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for k, title in CRITERIA.items():
        results = _outcomes.get(k)
        if not results:
            status = "NOT RUN"
        elif all(r == "passed" for r in results):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {k:2d} {status:7s} {title}")
