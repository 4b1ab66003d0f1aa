"""Collect acceptance-criterion outcomes and print one line per criterion."""

import re

_OUTCOMES = {}
DETAILS = {}

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    key = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _OUTCOMES[key] = (m.group(2), report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_OUTCOMES):
        name, outcome = _OUTCOMES[key]
        status = "PASS" if outcome == "passed" else "FAIL"
        detail = DETAILS.get(key, "")
        terminalreporter.write_line(f"[{status}] criterion {key:2d} {name}: {detail}")
