from __future__ import annotations

from pathlib import Path

import pytest

from atomchain.cli import read_table
from atomchain.prompts import load_templates

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def templates():
    return load_templates()


@pytest.fixture(scope="session")
def xlpe():
    return read_table(FIXTURES / "xlpe.table")


@pytest.fixture(scope="session")
def perf():
    return read_table(FIXTURES / "perf.table")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
