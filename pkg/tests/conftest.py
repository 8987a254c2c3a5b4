import numpy as np
import pytest

from srdo.linalg import Rng


@pytest.fixture
def rng():
    return Rng(12345)


def naive_matmul(a, b):
    n, m = len(a), len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            out[i][j] = sum(a[i][t] * b[t][j] for t in range(len(b)))
    return np.array(out)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
