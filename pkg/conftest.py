import logging

import pytest

from kinetic_barrier.core_model import HydroBounds, KernelParams, VelocityGrid
from kinetic_barrier.fixtures import maxwellian
from utils import LOG_FORMAT

logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# --- Shared fixtures ---


@pytest.fixture
def hard_params():
    return KernelParams(d=2, gamma=0.5, s=0.3)


@pytest.fixture
def maxwell_params():
    return KernelParams(d=2, gamma=0.0, s=0.5)


@pytest.fixture
def small_grid():
    return VelocityGrid(d=2, r_max=4.0, n_per_axis=16)


@pytest.fixture
def grid():
    return VelocityGrid(d=2, r_max=6.0, n_per_axis=32)


@pytest.fixture
def bounds():
    return HydroBounds(m0=0.5, M0=2.0, E0=4.0, H0=4.0)


@pytest.fixture
def small_maxwellian(small_grid):
    return maxwellian(small_grid)


@pytest.fixture
def f_maxwellian(grid):
    return maxwellian(grid)
