"""Shared fixtures and the acceptance verdict summary."""

import re

import pytest

_VERDICTS = {}


def _order(key):
    m = re.match(r"(\d+)(.*)", key)
    return int(m.group(1)), m.group(2)


@pytest.fixture
def verdict():
    """Record one pass/fail line for an acceptance criterion and return the flag."""

    def record(key, passed, detail):
        line = f"criterion {key}: {'PASS' if passed else 'FAIL'} ({detail})"
        _VERDICTS[key] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_VERDICTS, key=_order):
            terminalreporter.write_line(_VERDICTS[key])
