import numpy as np
import pytest

from rheaom import _backend
from rheaom.engine import load_character


@pytest.fixture(scope="session")
def char():
    return load_character("balanced")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


BACKENDS = _backend.available()


def pytest_report_header(config):
    return f"rheaom kernels: active={_backend.NAME}, available={','.join(BACKENDS)}"


def pytest_terminal_summary(terminalreporter):
    from helpers import CRITERIA
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
