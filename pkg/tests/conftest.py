import numpy as np
import pytest

from protocover import _kernels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test once per kernel implementation."""
    if request.param == "numba" and not _kernels.HAS_NUMBA:
        pytest.skip("numba not installed")
    monkeypatch.setattr(_kernels, "USE_NUMBA", request.param == "numba")
    return request.param


def random_batch(rng, n_classes, per_class, dim, scale=1.0):
    labels = np.repeat(np.arange(n_classes), per_class)
    return rng.normal(0.0, scale, size=(labels.size, dim)), labels


# one line per acceptance criterion, echoed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
