import numpy as np
import pytest

from sgpp_lab import geometry, score_field


class ZeroScore:
    """Flat prior: zero score everywhere."""

    dim = 2

    def score(self, x, t):
        return np.zeros_like(np.asarray(x, dtype=float))

    def log_density(self, x, t):
        return np.zeros(np.shape(x)[:-1])

    def ve_score(self, y, sigma):
        return np.zeros_like(np.asarray(y, dtype=float))


@pytest.fixture(scope="session")
def circle():
    m = geometry.circle()
    return m, score_field.from_manifold(m, 512)


@pytest.fixture(scope="session")
def segment():
    m = geometry.segment()
    return m, score_field.from_manifold(m, 512)


@pytest.fixture(scope="session")
def two_atoms():
    return score_field.DiscreteSupportScore([[0.0, 0.0], [1.0, 0.0]], [0.5, 0.5])


@pytest.fixture
def zero_score():
    return ZeroScore()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
