import numpy as np
import pytest

from toptail import PercentileGrid

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record a pass/fail line for the acceptance summary."""

    def record(number, description, passed, detail=""):
        _CRITERIA.append((number, description, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, description, passed, detail in sorted(_CRITERIA, key=lambda c: (c[0], c[1])):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {description}  {detail}")


@pytest.fixture(scope="session")
def paper_grid():
    return PercentileGrid(tuple(v / 100 for v in (0.01, 0.1, 0.5, 1, 5, 10)))


@pytest.fixture(scope="session")
def one_pct_grid():
    return PercentileGrid(tuple(v / 100 for v in (0.01, 0.1, 0.5, 1)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
