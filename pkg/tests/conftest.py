import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from apdecay import model as models
from apdecay.ap_analysis import APSignal, commensurate_project

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def burgers():
    return models.burgers()


@pytest.fixture
def gallery():
    return models.gallery()


@pytest.fixture
def quasi_periodic_data():
    """0.5 sin(2 pi x) + 0.5 sin(2 pi sqrt2 x) on the L = 100 super-cell."""
    sig = APSignal.sine(1.0, 0.5) + APSignal.sine(np.sqrt(2.0), 0.5)
    return commensurate_project(sig, (100.0,))[0]


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_line(request):
    """Record ``(criterion, passed, detail)``; the lines are echoed at the end of the session."""
    def record(label, passed, detail):
        line = f"criterion {label}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        request.config.stash[ACCEPTANCE_KEY].append(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: s.split(":")[0]):
            terminalreporter.write_line(line)
