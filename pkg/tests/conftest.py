import numpy as np
import pytest

from hggs_lab.ode_lab.dataset import generate_dataset
from hggs_lab.ode_lab.systems import BRUSSELATOR


@pytest.fixture(scope="session")
def bruss_small():
    """300 labeled Brusselator LHS samples, shared across modules."""
    return generate_dataset(BRUSSELATOR, 300, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line for an acceptance criterion; all lines print at the end."""

    def record(number, name, passed, detail=""):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
