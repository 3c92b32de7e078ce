"""Acceptance bookkeeping: tests tagged ``@pytest.mark.criterion(n, "title")``
are rolled up into one PASS/FAIL line per criterion at the end of the run."""

from __future__ import annotations

import pytest

_TITLES: dict[int, str] = {}
_OUTCOMES: dict[int, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion this test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            n, title = m.args
            _TITLES[n] = title
            _OUTCOMES.setdefault(n, [])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    # a setup error counts against the criterion as well
    if rep.when == "call" or rep.failed:
        _OUTCOMES[m.args[0]].append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        results = _OUTCOMES[n]
        if not results:
            status = "NOT RUN"
        else:
            status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {_TITLES[n]}")
