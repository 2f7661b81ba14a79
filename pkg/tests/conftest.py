import numpy as np
import pytest

from amlape import balance
from amlape.data import Dataset


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte Carlo studies")


@pytest.fixture(autouse=True, scope="session")
def _certify_every_balance_solve():
    # every weight solve anywhere in the suite runs the optimality certificate
    with balance.certify_all():
        yield


def logistic_data(n, p, seed, scale=1.0, k=3):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    theta = np.zeros(p)
    theta[: min(k, p)] = scale
    y = (rng.random(n) < 1 / (1 + np.exp(-X @ theta))).astype(float)
    return Dataset(X, y)


@pytest.fixture
def small_logistic():
    return logistic_data(20, 5, 3)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
