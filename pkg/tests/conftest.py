import sys

import numpy as np
import pytest

from scle.state_space import StateSpace


@pytest.fixture(scope="session")
def grid10():
    return StateSpace.grid(10.0, 0.01)


@pytest.fixture(scope="session")
def two_state():
    return StateSpace.finite(["a", "b"])


@pytest.fixture(scope="session")
def bd200():
    return StateSpace.countable(200)


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
