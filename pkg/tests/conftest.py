"""Shared fixtures and the acceptance summary printed at the end of a run."""
import numpy as np
import pytest

from kgbutcher.initial_data import scenario_data
from kgbutcher.lattice import GridSpec

# filled by tests/test_acceptance.py: {criterion number: (passed, detail)}
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def grid64():
    return GridSpec(1, 64, 2 * np.pi, 1.0)


@pytest.fixture(scope="session")
def scenario(grid64):
    return scenario_data(grid64)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
