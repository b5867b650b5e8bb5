from __future__ import annotations

import json
from importlib.resources import files

import pytest

from tabresearch.table import ingest_csv, ingest_grid

ACCEPTANCE_LINES: list[str] = []


def _fixture_bytes(name: str) -> bytes:
    return files("tabresearch.fixtures").joinpath(name).read_bytes()


@pytest.fixture(scope="session")
def f1_grid():
    return ingest_grid(_fixture_bytes("F1.json"))


@pytest.fixture(scope="session")
def all_fixture_grids():
    return {
        "F1": ingest_grid(_fixture_bytes("F1.json")),
        "F2": ingest_grid(_fixture_bytes("F2.json")),
        "F3": ingest_csv(_fixture_bytes("F3.csv")),
        "F4": ingest_grid(_fixture_bytes("F4.json")),
    }


@pytest.fixture(scope="session")
def golden_queries():
    return json.loads(_fixture_bytes("queries_F1.json"))


@pytest.fixture
def acceptance_line():
    def emit(text: str) -> None:
        ACCEPTANCE_LINES.append(text)
        print(text)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
