from __future__ import annotations

import pytest

from smsqldb.microdb import default_catalog

# The table the firmware searched: stored sepal lengths, row by row.
STORED_KEYS = (5, 4, 7, 6, 7, 7, 4, 6, 5, 4, 7, 6, 7, 7, 4, 7)

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def catalog():
    return default_catalog()


@pytest.fixture
def iris_table(catalog):
    return catalog.table("iris", "iris")


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
