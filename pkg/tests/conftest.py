import numpy as np
import pytest

from chronocl.model import Arch, init_model
from chronocl.stream import Batch

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_model(rng, d=5, h=4, scale=1.0):
    return init_model(Arch(d, h), rng, scale)


def random_batch(rng, n, d):
    y = np.zeros(n)
    y[n // 2:] = 1.0
    return Batch(rng.standard_normal((n, d)), y, 0)
