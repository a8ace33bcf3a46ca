import numpy as np
import pytest

from emdx import partition
from emdx.metric import Distribution

partition.CHECK_INVARIANTS = True


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pair(n, den, rng, support=None):
    return Distribution.random(n, den, rng, support), Distribution.random(n, den, rng, support)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[criterion] = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[criterion])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
