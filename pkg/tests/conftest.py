import numpy as np
import pytest

from jointsched.demand import BinomialMinislot
from jointsched.model import LogUtility, Monomial, PiecewiseQuadratic, SystemConfig

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def two_by_two():
    """Two users (robust, sensitive), two equally likely channel states."""
    return SystemConfig(
        num_users=2,
        state_probs=np.array([0.5, 0.5]),
        peak_rates=np.array([[6.0, 8.0], [3.0, 5.0]]),
        utilities=(LogUtility(label="robust"), LogUtility(label="sensitive")),
        loss_models=(Monomial(1, 2), PiecewiseQuadratic(0.7)),
        demand=BinomialMinislot(0.5, 0.3),
        delta=0.3,
    )


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
