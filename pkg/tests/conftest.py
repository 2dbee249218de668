import numpy as np
import pytest

from deepict.simulate import SimConfig, generate


@pytest.fixture(scope="session")
def case1_small():
    """Case-1 PH dataset with n=200."""
    return generate(SimConfig(n=200, case=1, r_true=0.0, seed=11))


@pytest.fixture(scope="session")
def case1_po_small():
    return generate(SimConfig(n=200, case=1, r_true=1.0, seed=12))


@pytest.fixture
def rng():
    return np.random.default_rng(20241015)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one line per acceptance criterion for the terminal summary."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
