import re

import pytest

_LINES = []


@pytest.fixture
def verdict():
    """verdict(criterion, passed, detail) prints one PASS/FAIL line and keeps it for the summary."""

    def emit(criterion, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
        print(line)
        _LINES.append((_order(str(criterion)), line))
        return passed

    return emit


def _order(criterion):
    m = re.match(r"(\d+)(.*)", criterion)
    return int(m.group(1)), m.group(2)


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
