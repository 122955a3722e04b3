import numpy as np
import pytest

from frackpz.domain_grid import Domain, make_grid

# filled by test_acceptance; printed once at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def interval_grid(n: int, a: float = -1.0, b: float = 1.0):
    return make_grid(Domain.interval(a, b), (b - a) / n)


@pytest.fixture(scope="session")
def g256():
    return interval_grid(256)


@pytest.fixture(scope="session")
def g512():
    return interval_grid(512)


@pytest.fixture(scope="session")
def disk16():
    return make_grid(Domain.disk((0.0, 0.0), 1.0), 1 / 16)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
