import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from invspkf.models import linear_model

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

_ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    """Store a one-line verdict per acceptance criterion, printed at the end of the session."""

    def record(number, ok, detail):
        _ACCEPTANCE[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])


@pytest.fixture
def linear2():
    """Constant-velocity model with position observed, action observing velocity."""
    F = np.array([[1.0, 1.0], [0.0, 1.0]])
    H = np.array([[1.0, 0.0]])
    G = np.array([[0.5, 1.0]])
    Q = np.array([[0.3, 0.1], [0.1, 0.2]])
    R = np.array([[0.8]])
    S = np.array([[0.4]])
    return linear_model(F, H, G, Q, R, S)


@pytest.fixture
def scalar_linear():
    return linear_model([[0.9]], [[1.0]], [[2.0]], [[0.5]], [[1.5]], [[0.7]])
