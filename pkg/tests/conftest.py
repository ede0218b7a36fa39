import numpy as np
import pytest

from stochaction.grid import make_grid
from stochaction.semimartingale import constant_model, ou_control_model, simulate, wiener_model
from stochaction.fbs import example_model

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_grid():
    return make_grid(128)


@pytest.fixture(scope="session")
def example_small(small_grid):
    return simulate(example_model(), small_grid, 4000, seed=1)


@pytest.fixture(scope="session")
def ou_small(small_grid):
    return simulate(ou_control_model(), small_grid, 4000, seed=2)


@pytest.fixture(scope="session")
def wiener_small(small_grid):
    return simulate(wiener_model(1), small_grid, 2000, seed=3)


@pytest.fixture(scope="session")
def deterministic_small(small_grid):
    return simulate(constant_model(drift=1.0, sigma=0.0), small_grid, 1000, seed=4)


@pytest.fixture
def rng():
    return np.random.default_rng(20261017)
