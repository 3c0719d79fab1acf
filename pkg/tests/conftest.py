import numpy as np
import pytest

from scgt.design import build_base_matrix, sample_design, trivial_base_matrix


@pytest.fixture(scope="session")
def small_base():
    return build_base_matrix(3, 10)


@pytest.fixture(scope="session")
def small_design(small_base):
    return sample_design(small_base, 240, 600, seed=7)


@pytest.fixture(scope="session")
def iid_design():
    return sample_design(trivial_base_matrix(0.5), 200, 400, seed=3, kind="iid")


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance_report():
    """Record ``(criterion, passed, detail)``; lines are echoed and summarised at the end."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
