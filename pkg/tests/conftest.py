"""Per-criterion bookkeeping for the acceptance suite.

Tests tagged ``@pytest.mark.criterion(N)`` are grouped, and one pass/fail
line per criterion is printed at the end of the run.  The ``note`` fixture
attaches measured numbers to that line.
"""

import sys
from collections import defaultdict
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

_results: dict[int, list[tuple[str, bool]]] = defaultdict(list)
_notes: dict[int, list[str]] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def _criterion(item):
    mark = item.get_closest_marker("criterion")
    return mark.args[0] if mark else None


@pytest.fixture
def note(request):
    num = _criterion(request.node)

    def add(text: str) -> None:
        if num is not None:
            _notes[num].append(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    num = _criterion(item)
    if num is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _results[num].append((item.name, rep.passed))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_results):
        runs = _results[num]
        failed = [name for name, ok in runs if not ok]
        status = "FAIL" if failed else "PASS"
        line = f"criterion {num}: {status} ({len(runs) - len(failed)}/{len(runs)} checks)"
        if failed:
            line += " failing: " + ", ".join(failed)
        terminalreporter.write_line(line)
        for text in _notes.get(num, []):
            terminalreporter.write_line(f"    {text}")
