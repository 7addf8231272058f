import numpy as np
import pytest
from hypothesis import settings

from wbary import geometry as geo

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def plane():
    return geo.ManifoldSpec.box([(-5.0, 5.0), (-5.0, 5.0)])


@pytest.fixture(scope="session")
def torus():
    return geo.ManifoldSpec.torus([1.0, 1.0])


@pytest.fixture(scope="session")
def sphere():
    return geo.ManifoldSpec.sphere(2, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Criterion number -> one-line verdict, printed in the terminal summary."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
