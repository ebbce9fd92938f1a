import numpy as np
import pytest

from stochfeyn import make_grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid64():
    return make_grid(20.0, 64)


def smooth_state(rng, grid, degree=3, width=1.0):
    """Random complex polynomial times a Gaussian: smooth and well inside the box."""
    coef = rng.normal(size=degree + 1) + 1j * rng.normal(size=degree + 1)
    x = grid.q
    return np.polyval(coef, x / 2) * np.exp(-np.square(x - rng.uniform(-1, 1)) / (2 * width**2))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
