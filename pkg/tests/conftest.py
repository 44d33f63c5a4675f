import math

import numpy as np
import pytest

from nerimf.geometry import build_geometry, solve_poisson
from nerimf.measure import CirculationMeasure

EIGHT_PI = 8.0 * math.pi


@pytest.fixture(scope="session")
def delta1():
    return CirculationMeasure.dirac(1.0)


@pytest.fixture(scope="session")
def p_mixed():
    """0.5 delta_1 + 0.5 delta_0.5, the standard calH test measure."""
    return CirculationMeasure.from_atoms([(1.0, 0.5), (0.5, 0.5)])


@pytest.fixture(scope="session")
def p_signed():
    return CirculationMeasure.from_atoms([(1.0, 0.5), (-0.5, 0.5)])


@pytest.fixture(scope="session")
def disc32():
    return build_geometry("disc", 32)


@pytest.fixture(scope="session")
def disc64():
    return build_geometry("disc", 64)


@pytest.fixture(scope="session")
def torus32():
    return build_geometry("flat_torus", 32)


@pytest.fixture(scope="session")
def torus64():
    return build_geometry("flat_torus", 64)


@pytest.fixture(scope="session")
def rect32():
    return build_geometry("rectangle", 32)


@pytest.fixture(scope="session")
def annulus64():
    return build_geometry("annulus", 64)


def smooth_field(geo, rng, scale=1.0):
    """Poisson-smoothed noise: admissible (zero boundary / zero mean) and smooth enough for FD checks."""
    f = geo.project(rng.standard_normal(geo.n))
    if not geo.is_torus:
        f[~geo.interior_mask] = 0.0
    u = solve_poisson(geo, geo.project(f))
    u = geo.project(u)
    return scale * u / max(np.max(np.abs(u)), 1e-300)


# acceptance reporting: one line per criterion, printed after the run -----------------

ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion():
    def report(number, name, passed, detail=""):
        ACCEPTANCE_LINES[number] = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
