import numpy as np
import pytest

from syncstab import sync
from syncstab.model import MeanFieldModel, PerturbationSpec

KAPPA = 0.05


def winfree(N=5, r=0.0):
    pert = PerturbationSpec("random-trig", r, 3) if r > 0 else PerturbationSpec()
    return MeanFieldModel(N, kappa=KAPPA, perturbation=pert)


@pytest.fixture(scope="session")
def orbit_h0():
    return sync.find_locked_orbit(winfree(), 0.01 * np.arange(5))


@pytest.fixture(scope="session")
def orbit_random():
    return sync.find_locked_orbit(winfree(r=0.01), 0.01 * np.arange(5))


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
