import numpy as np
import pytest

from qholo.core import FrameStack, PhaseStepSchedule


def fringe_stack(theta, t, m, nu=0.0, visibility=1.0, flux=1.0, background=0.0, exposure=1.0):
    """Noiseless frames ``flux*(1 + V*t*cos(theta - nu + dphi_m)) + background``."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), theta.shape)
    schedule = PhaseStepSchedule.canonical(m)
    frames = np.stack([
        flux * (1 + visibility * t * np.cos(theta - nu + d)) + background for d in schedule.steps
    ])
    return FrameStack(schedule, frames * exposure, exposure)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
