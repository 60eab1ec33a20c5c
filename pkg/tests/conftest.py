import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE_LINES = {}


def record_acceptance(number, ok, detail):
    ACCEPTANCE_LINES[number] = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def random_column_stochastic(rng, rows, cols, zero_frac=0.0):
    A = rng.uniform(0.05, 1.0, size=(rows, cols))
    if zero_frac:
        A[rng.random(size=A.shape) < zero_frac] = 0.0
        for j in range(cols):
            if A[:, j].sum() == 0:
                A[rng.integers(rows), j] = 1.0
    return A / A.sum(axis=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
