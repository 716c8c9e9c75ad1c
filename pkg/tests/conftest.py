import warnings

import numpy as np
import pytest

from portsym.core import collect
from portsym.domains import make_corridor, make_rod_block
from portsym.pipeline import ground_task, learn_portable

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def option_names(env):
    return {o.option_id: o.name for o in env.options}


@pytest.fixture(scope="session")
def corridor_env():
    return make_corridor()


@pytest.fixture(scope="session")
def corridor_data(corridor_env):
    return collect(corridor_env, 2000, 0)


@pytest.fixture(scope="session")
def corridor_model(corridor_env, corridor_data):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return learn_portable(corridor_data, option_names(corridor_env))


@pytest.fixture(scope="session")
def corridor_grounded(corridor_model, corridor_data):
    return ground_task(corridor_model, corridor_data)


@pytest.fixture(scope="session")
def rod_env():
    return make_rod_block(3, 1)


@pytest.fixture(scope="session")
def rod_data(rod_env):
    return collect(rod_env, 4000, 0)


@pytest.fixture(scope="session")
def rod_grounded(rod_env, rod_data):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = learn_portable(rod_data, option_names(rod_env))
        return ground_task(model, rod_data)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
