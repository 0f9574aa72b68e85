import numpy as np
import pytest

from foredecode.models import JointTable

ACCEPTANCE_RESULTS: list[tuple[int, bool, str]] = []


def record_acceptance(criterion: int, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {criterion:2d} {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_RESULTS.append((criterion, passed, line))
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, passed, line in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line)


@pytest.fixture
def xor_pair_table() -> JointTable:
    """L=2, m=2 anti-correlated fixture: mass on indices 00,01,10,11."""
    return JointTable(2, 2, np.array([0.05, 0.45, 0.45, 0.05]))


@pytest.fixture
def skewed_table() -> JointTable:
    """L=2, m=2 fixture with an informative first position."""
    return JointTable(2, 2, np.array([0.4, 0.1, 0.1, 0.4]))


def random_joint(length: int, m: int, seed: int) -> JointTable:
    rng = np.random.default_rng(seed)
    mass = rng.dirichlet(np.ones(m ** length))
    return JointTable(length, m, mass)
