import numpy as np
import pytest

from smoothsq import approx, gaussian


@pytest.fixture(scope="session")
def gh200():
    return gaussian.gauss_hermite_grid(200)


@pytest.fixture(scope="session")
def agrid():
    return approx.approximation_grid(200)


@pytest.fixture(scope="session")
def witness8():
    """Best degree-8 approximation of T_0.5 sign, shared by several modules."""
    return approx.l1_best_approx(approx.smoothed("sign", 0.5), 8, approx.approximation_grid(200))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Append one summary line per acceptance criterion, printed at session end."""
    return request.config.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
