"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from sonolab.acquisition import Pulse, default_pitch
from sonolab.geometry import make_linear_array


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def pulse():
    """Gaussian-windowed 3.4 MHz pulse."""
    return Pulse()


@pytest.fixture(scope="session")
def pitch():
    """Half-wavelength element pitch at 3.4 MHz."""
    return default_pitch()


@pytest.fixture(scope="session")
def array16(pitch):
    return make_linear_array(16, pitch)


def brute_coarray(positions):
    """Pair-sum enumeration used as an independent co-array oracle."""
    return sorted({a + b for a in positions for b in positions})


def brute_fractal(generator, order):
    """Direct recursion W_{r+1} = U_{n in G} (W_r + n L^r)."""
    L = 2 * max(generator) + 1
    w = [0]
    for r in range(order):
        w = [p + n * L ** r for n in generator for p in w]
    return sorted(set(w))


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance report at the end of the run."""
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
