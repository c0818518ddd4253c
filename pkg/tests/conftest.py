import numpy as np
import pytest

from slablu.problem import assemble_fd5, helmholtz_problem, poisson_problem

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def poisson32():
    return assemble_fd5(poisson_problem(32))


@pytest.fixture(scope="session")
def helmholtz32():
    return assemble_fd5(helmholtz_problem(32, ppw=15))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
