import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from adapj.harness import run_babbling
from adapj.plant import FingerPlantConfig, SoftPlant

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# acceptance lines collected during the session, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def finger_data():
    return run_babbling(SoftPlant(FingerPlantConfig()), 100, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
