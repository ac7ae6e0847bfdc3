import numpy as np
import pytest

from fsqr.design import partition, standardize


def make_problem(n=40, p=6, seed=0, G=2, noise=1.0):
    """Small random design (intercept first) with a two-signal response."""
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p))])
    y = X[:, 1] - 0.5 * X[:, min(2, p)] + noise * rng.standard_normal(n)
    design, smap = standardize(partition(X, min(G, p + 1)))
    return X, y, design, smap


@pytest.fixture
def small_problem():
    return make_problem()


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
