import math

import numpy as np
import pytest
from hypothesis import settings

from nehari_lab.grid import make_grid

settings.register_profile("lab", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("lab")

# verdict lines collected by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def uniform_grid():
    return make_grid(12.0, 1200)


@pytest.fixture(scope="session")
def talenti_grid():
    return make_grid(200.0, 4000, "geometric", core=10.0, ratio=1.002)


def gaussian(r):
    return np.exp(-0.5 * r * r)


def gaussian_slope(r):
    return -r * np.exp(-0.5 * r * r)


GAUSS = {
    # integrals over R^3 of e^{-k r^2}: (pi/k)^{3/2}
    "mass": math.pi**1.5,
    "grad_sq": 1.5 * math.pi**1.5,
    "l4": (math.pi / 2.0) ** 1.5,
    "l6": (math.pi / 3.0) ** 1.5,
}
