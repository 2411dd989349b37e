import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dronessl.geometry import build_grid, cube_array

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Many properties are cheap enough to run 1000 generated cases.
THOROUGH = settings(max_examples=1000, deadline=None)


@pytest.fixture(scope="session")
def cube():
    return cube_array()


@pytest.fixture(scope="session")
def grid5():
    return build_grid(5, 5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance results, one line per criterion, printed after the run.
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
            terminalreporter.write_line(ACCEPTANCE[key])
