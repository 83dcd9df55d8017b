import itertools

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss

from burgers_galerkin import wick


@pytest.fixture(autouse=True)
def _exact_mode():
    with wick.arithmetic("exact"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def gauss_hermite_expectation(P, order=12):
    """Tensor Gauss-Hermite quadrature of E[P], independent of the exact moment code."""
    x, w = hermegauss(order)
    w = w / w.sum()
    m = P.mode_count
    total = 0.0
    for idx in itertools.product(range(order), repeat=m):
        pt = np.array([x[i] for i in idx])
        total += np.prod([w[i] for i in idx]) * float(P.evaluate(pt))
    return total


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
