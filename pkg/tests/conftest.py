import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (title, outcome, seconds, limit)
_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(number, title, limit_s): numbered exit criterion with a runtime limit")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title, limit = mark.args
    if rep.when == "call":
        if rep.passed and rep.duration > limit:
            rep.outcome = "failed"
            rep.longrepr = f"criterion {number}: took {rep.duration:.2f} s, limit {limit} s"
        _ACCEPTANCE[number] = (title, rep.outcome, rep.duration, limit)
    elif rep.failed:
        _ACCEPTANCE[number] = (title, "failed", rep.duration, limit)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, outcome, seconds, limit = _ACCEPTANCE[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(
            f"{status}  criterion {number:2d}: {title}  ({seconds:.2f} s, limit {limit:g} s)")
