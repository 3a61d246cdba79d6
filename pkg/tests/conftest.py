import numpy as np
import pytest

from wavetomo.acquisition import Pulse, build_system
from wavetomo.born import BornOperator
from wavetomo.grid import Grid

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def small_system(n_full=48, n_fov=28, n_steps=120, n_receivers=16, n_sources=4, sponge=10):
    """A cheap ring system for unit tests (f0 scaled so the grid keeps > 4 points per wavelength)."""
    f0 = 0.15
    grid = Grid(n_full, n_fov, 2.0, 0.6, n_steps)
    radius = 2.0 * (n_full // 2 - sponge - 1)
    return build_system(grid, n_receivers, n_sources, radius, Pulse(f0, 3.2 * 0.5 / f0, 2.0 * 0.5 / f0),
                        sponge_width=sponge)


@pytest.fixture(scope="session")
def system():
    return small_system()


@pytest.fixture(scope="session")
def born_op(system):
    return BornOperator(system)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
