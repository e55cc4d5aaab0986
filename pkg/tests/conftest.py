from __future__ import annotations

import numpy as np
import pytest

from polyseq import data_path
from polyseq.data import load_dataset
from polyseq.schema import load_schema
from polyseq.tensor import default_dtype

# (criterion number, title, passed, detail) collected by tests/test_acceptance.py
ACCEPTANCE: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}")


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


@pytest.fixture(scope="session")
def mini_schema():
    return load_schema(data_path("mini_schema.toml"))


@pytest.fixture(scope="session")
def mini_records(mini_schema):
    return load_dataset(data_path("mini.csv"), mini_schema)
