import numpy as np
import pytest

from koopman_auv.edmd import collect_dataset, fit
from koopman_auv.lifting import make_dictionary
from koopman_auv.plant import PlantParams


@pytest.fixture(scope="session")
def plant():
    return PlantParams()


@pytest.fixture(scope="session")
def default_dataset(plant):
    return collect_dataset(plant, n_traj=1000, steps_per_traj=100, dt=0.01, input_low=-50,
                           input_high=50, v0_low=-0.5, v0_high=0.5, seed=0)


@pytest.fixture(scope="session")
def default_model(default_dataset):
    return fit(default_dataset, make_dictionary(n=1, n_rbf=4, seed=0), alpha=1e-6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""

    def _report(criterion, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
