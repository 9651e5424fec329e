import numpy as np
import pytest

from mfmap.simdata import unit_grid
from mfmap.spatial import Ensemble, MultiFidelityLocations


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def nested_locs():
    """Two nested unit-square grids: 3x3 coarse, 6x6 fine."""
    return MultiFidelityLocations((unit_grid(3), unit_grid(6)))


@pytest.fixture
def small_ensemble(nested_locs):
    g = np.random.default_rng(7)
    return Ensemble(tuple(g.standard_normal((12, s)) for s in nested_locs.sizes))


def write_text(path, text):
    path.write_text(text)
    return path


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS, format_line

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(format_line(number))
