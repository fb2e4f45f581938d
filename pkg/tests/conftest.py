import numpy as np
import pytest

from smdpcache.workload import FileCatalog


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_catalog(lifetime, size, importance, eta=1.0):
    return FileCatalog(lifetime=lifetime, size=size, importance=importance, zipf_eta=eta)


@pytest.fixture
def small_catalog():
    return make_catalog(
        lifetime=[20.0, 10.0, 30.0, 15.0],
        size=[300.0, 500.0, 200.0, 400.0],
        importance=[0.8, 0.5, 0.3, 0.9],
    )


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
