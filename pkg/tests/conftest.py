"""Shared pytest plumbing: the acceptance-criterion reporter.

Each acceptance test funnels its verdict through the ``criterion`` fixture,
which prints one PASS/FAIL line immediately and repeats all lines in a
summary section at the end of the run, so the gate is readable even when
capture is on.
"""

import pytest

_LINES: list[str] = []


@pytest.fixture
def criterion():
    def report(name: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'}: {name}" + (f" — {detail}" if detail else "")
        _LINES.append(line)
        print(line, flush=True)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
