import numpy as np
import pytest

from idol.phantoms import build_cohort
from idol.training import TrainConfig

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_cohort():
    return build_cohort("seg", n_train=2, n_holdout=1, resolution=32, seed=3)


@pytest.fixture
def quick_config():
    return TrainConfig(epochs1=2, epochs2=2, k_prior=4, seed=3)
