import math

import numpy as np
import pytest

from nerimf.errors import GeometryError, ResolutionError
from nerimf.families import (bubble_family, curve_point, green_bubble, mid_circle, truncated_green_family)
from nerimf.geometry import build_geometry
from nerimf.inequalities import sharp_mt_probe

EIGHT_PI = 8 * math.pi


@pytest.fixture(scope="module")
def annulus256():
    return build_geometry("annulus", 256)


@pytest.fixture(scope="module")
def torus512():
    return build_geometry("flat_torus", 512)


def test_truncated_green_zero(annulus64):
    p = truncated_green_family(annulus64, mid_circle(annulus64), 0.0, 1.0)
    assert np.all(p.field == 0) and p.energy == 0


def test_truncated_green_energy_rate(annulus256):
    c = mid_circle(annulus256)
    for r in (0.9, 0.99):
        p = truncated_green_family(annulus256, c, r, 0.7)
        assert abs(p.energy / (-32 * math.pi * math.log(1 - r)) - 1) <= 0.10
        assert p.energy == pytest.approx(annulus256.energy(p.field), rel=1e-10)


def test_truncated_green_J_rate(annulus256, delta1):
    lam, delta = 10 * math.pi, 0.05
    assert lam * (1 - delta) ** 2 > EIGHT_PI
    c = mid_circle(annulus256)
    pts = [truncated_green_family(annulus256, c, r, 0.0, P=delta1) for r in 1 - np.geomspace(0.3, 0.01, 8)]
    v = sharp_mt_probe(annulus256, delta1, lam, pts, delta=delta)
    pred = v.details["predicted_rate"]
    assert pred == pytest.approx(2 * (EIGHT_PI - lam * (1 - 2 * delta)))
    assert v.details["slope_J"] <= pred + 0.1 * abs(pred)


def test_truncated_green_errors(annulus64, disc32):
    c = mid_circle(annulus64)
    with pytest.raises(GeometryError):
        truncated_green_family(disc32, c, 0.5, 0.0)
    with pytest.raises(GeometryError):
        truncated_green_family(annulus64, c, 1.0, 0.0)
    with pytest.raises(GeometryError):
        truncated_green_family(annulus64, c, 0.5, 0.0, eps0=0.3)


def test_curve_point_periodic():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    assert np.allclose(curve_point(sq, 0.0), [0, 0])
    assert np.allclose(curve_point(sq, math.pi / 2), [1, 0])
    assert np.allclose(curve_point(sq, 2 * math.pi + math.pi), [1, 1])


def test_bubble_rates_torus(torus512):
    # fitted rates over eps in [0.01, 0.05]; the ratios E / log(1/eps) carry an O(1) term
    # that is still large on this range and is covered by the acceptance suite
    eps = np.geomspace(0.05, 0.01, 6)
    pts = [bubble_family(torus512, (0.5, 0.5), 0.5, e) for e in eps]
    L = np.log(1 / eps)
    slope_E = np.polyfit(L, [p.energy for p in pts], 1)[0]
    slope_D = np.polyfit(L, [p.log_denominator for p in pts], 1)[0]
    assert abs(slope_E / (32 * math.pi) - 1) <= 0.05
    assert abs(slope_D / 2 - 1) <= 0.10
    for p in pts:
        assert abs(torus512.mean(p.field)) <= 1e-10


def test_bubble_degenerate_cap(torus64):
    p = bubble_family(torus64, (0.5, 0.5), 0.25, 0.25)
    assert np.all(np.isfinite(p.field)) and math.isfinite(p.energy)


def test_bubble_refuses_underresolved(torus64):
    with pytest.raises(ResolutionError):
        bubble_family(torus64, (0.5, 0.5), 0.5, 0.01)
    with pytest.raises(ResolutionError):
        green_bubble(torus64, (0.5, 0.5), 0.01)


def test_bubble_geometry_errors(torus64, disc64):
    with pytest.raises(GeometryError):
        bubble_family(torus64, (0.5, 0.5), 0.6, 0.1)
    with pytest.raises(GeometryError):
        bubble_family(torus64, (0.5, 0.5), 0.1, 0.2)
    with pytest.raises(GeometryError):
        bubble_family(disc64, (0.8, 0.0), 0.5, 0.2)


def test_dirichlet_bubble_vanishes_outside(disc64):
    p = bubble_family(disc64, (0.0, 0.0), 0.5, 0.1)
    assert np.all(p.field[disc64.distances((0, 0)) >= 0.5] == 0)
    assert np.all(p.field >= 0)


def test_green_bubble_has_lower_energy_offset(torus64):
    a = green_bubble(torus64, (0.5, 0.5), 0.05)
    b = bubble_family(torus64, (0.5, 0.5), 0.5, 0.05)
    # same core, so the leading log(1/eps) parts agree; the Green-matched one sits lower in J
    lam = 28.0
    assert a.J(lam) < b.J(lam)
