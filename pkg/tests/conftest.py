import re
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_NOTES: dict = {}
_OUTCOMES: dict = {}
_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")


@pytest.fixture
def record(request):
    """Attach a one-line measurement to the running acceptance test."""
    def note(msg):
        _NOTES[request.node.nodeid] = msg
    return note


def pytest_runtest_logreport(report):
    if _CRITERION.search(report.nodeid) and (report.when == "call" or report.outcome != "passed"):
        _OUTCOMES.setdefault(report.nodeid, report.outcome)
        if report.outcome != "passed":
            _OUTCOMES[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    rows = sorted(_OUTCOMES.items(), key=lambda kv: int(_CRITERION.search(kv[0]).group(1)))
    for nodeid, outcome in rows:
        m = _CRITERION.search(nodeid)
        status = "PASS" if outcome == "passed" else "FAIL"
        note = _NOTES.get(nodeid, "")
        terminalreporter.write_line(f"criterion {m.group(1)} ({m.group(2)}): {status}  {note}".rstrip())
