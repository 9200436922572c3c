import numpy as np
import pytest

from trajsim.dataset import Dataset, compute_popularity, synthetic_movielens
from trajsim.mf import train_mf


@pytest.fixture(scope="session")
def small_data():
    """500 users with power-law item popularity."""
    return synthetic_movielens(n_users=500, n_items=400, mean_history=40, min_history=10, rng_seed=3)


@pytest.fixture(scope="session")
def small_mf(small_data):
    return train_mf(small_data, dim=8, lam=5.0, epochs=4, rng_seed=0)


@pytest.fixture(scope="session")
def small_raw(small_data):
    return compute_popularity(small_data, "raw_count")


@pytest.fixture(scope="session")
def small_pct(small_data):
    return compute_popularity(small_data, "percentile")


def make_dataset(rows):
    rows = list(rows)
    return Dataset.from_records(rows)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
