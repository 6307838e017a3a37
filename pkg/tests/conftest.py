import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from panelcs.core import GroupModel, PanelDataset

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def intercept_panel(y):
    y = np.asarray(y, dtype=float)
    return PanelDataset(y, np.ones(y.shape + (1,)))


def constant_model(values, n_periods, assignment=None):
    return GroupModel.constant(np.asarray(values, dtype=float)[:, None], n_periods, assignment)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
