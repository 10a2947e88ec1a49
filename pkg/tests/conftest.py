import pytest

from choquard.grid import ProblemParams, build_grid
from choquard.riesz import build_riesz_operator

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, passed: bool, detail: str) -> None:
    """Store one acceptance verdict for the terminal summary."""
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def p31():
    return ProblemParams(3, 1.0)


@pytest.fixture(scope="session")
def grid31(p31):
    return build_grid(p31, 40.0, 2000)


@pytest.fixture(scope="session")
def op31(grid31):
    return build_riesz_operator(grid31)


@pytest.fixture(scope="session")
def wide_grid31(p31):
    """Large graded domain: groundstates are resolved and spreading has room."""
    return build_grid(p31, 3000.0, 2000, 3.0)


@pytest.fixture(scope="session")
def wide_op31(wide_grid31):
    return build_riesz_operator(wide_grid31)


@pytest.fixture(scope="session")
def small_grid31(p31):
    return build_grid(p31, 40.0, 400)


@pytest.fixture(scope="session")
def small_op31(small_grid31):
    return build_riesz_operator(small_grid31)
