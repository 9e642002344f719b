import sys

import numpy as np
import pytest

from asl.setups import reference_setup, reduced5
from asl.graph import build_averaging_matrix


@pytest.fixture(scope="session")
def ref10():
    """Ten-agent setup: (adjacency, averaging matrix, Laplace model, spacing 0.1)."""
    return reference_setup(0.1)


@pytest.fixture(scope="session")
def ref_unit():
    return reference_setup(1.0)


@pytest.fixture(scope="session")
def small():
    adj, model = reduced5()
    return adj, build_averaging_matrix(adj), model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)



def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for num in sorted(results):
            terminalreporter.write_line(results[num])
