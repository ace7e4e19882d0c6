import sys

import numpy as np
import pytest

from asysqn.data import Dataset


def pytest_addoption(parser):
    parser.addoption("--skip-speedup", action="store_true", default=False,
                     help="skip the hardware-dependent wall-clock speedup criterion")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--skip-speedup"):
        skip = pytest.mark.skip(reason="--skip-speedup given")
        for item in items:
            if "speedup" in item.keywords:
                item.add_marker(skip)


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


@pytest.fixture
def two_point():
    """1-D least squares rows z=(1),(2) with labels 1, 2 (exact fit at x=1)."""
    return Dataset(np.array([[1.0], [2.0]]), np.array([1.0, 2.0]))


@pytest.fixture
def square():
    """Single row z=1, y=0: f(x) = x^2."""
    return Dataset(np.array([[1.0]]), np.array([0.0]))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        RESULTS = mod.RESULTS
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
