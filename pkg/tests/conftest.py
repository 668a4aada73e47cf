import numpy as np
import pytest

from parabolica.models import flowable_model, surgered_model

#: (criterion number, passed, message) lines collected by the acceptance tests
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def flow05():
    return flowable_model(0.5)


@pytest.fixture(scope="session")
def flow2():
    return flowable_model(2.0)


@pytest.fixture(scope="session")
def surg05():
    """Flowable c = 0.5 model after one surgery with amplitude 0.05."""
    return surgered_model(0.5, 0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, ok, msg in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(msg)
