import numpy as np
import pytest

from dfdsolve.optics import CameraIntrinsics, preset


@pytest.fixture
def nyu():
    return preset("nyuv2")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cam():
    # two-slice camera used by the quick gradient checks
    return CameraIntrinsics(0.05, 8.0, 1e-5, (1.0, 2.5), (0.5, 10.0))


def central_diff(f, x, idx, h):
    xp = x.copy()
    xm = x.copy()
    xp[idx] += h
    xm[idx] -= h
    return (f(xp) - f(xm)) / (2 * h)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
