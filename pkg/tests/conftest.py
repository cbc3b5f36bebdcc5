import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# prerequisite 1 -> 2 and 1 -> 3 (0-based below)
FORK_EDGES = [(0, 1), (0, 2)]
FORK_PATTERNS = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 0, 1], [1, 1, 1]], dtype=np.uint8)

Q_SEVEN = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1],
                    [1, 1, 0], [0, 1, 1], [0, 1, 1], [1, 0, 1]], dtype=np.uint8)
Q_SIX = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1],
                  [1, 1, 0], [0, 1, 1], [1, 0, 1]], dtype=np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
