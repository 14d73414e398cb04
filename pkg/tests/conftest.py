"""Collects the acceptance verdicts so they are listed at the end of every run."""

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    def _report(criterion: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
