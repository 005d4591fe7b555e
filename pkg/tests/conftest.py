import numpy as np
import pytest

from splitaudit.dataset import GroupedSample

ACCEPTANCE_LINES = []


def random_grouped(rng, k=None, m=None, n_max=30, card_max=4):
    k = k or int(rng.integers(2, 5))
    m = m or int(rng.integers(1, 6))
    card = tuple(int(c) for c in rng.integers(2, card_max + 1, size=m))
    groups = []
    for _ in range(k):
        n = int(rng.integers(2, n_max + 1))
        groups.append(np.column_stack([rng.integers(0, c, size=n) for c in card]))
    return GroupedSample.from_labels(np.vstack(groups),
                                     np.repeat(np.arange(k), [len(x) for x in groups]), card)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
