"""Explicit test families: truncated Green's functions and bubbles.

Both are used to drive the functional towards -infinity (or to check that it
stays bounded) and to build the far endpoint of mountain-pass paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import GeometryError, ResolutionError
from .functional import log_denominator
from .geometry import TWO_PI, DiscreteGeometry
from .measure import CirculationMeasure


@dataclass
class TestFamilyPoint:
    family: str
    parameters: dict
    field: np.ndarray
    energy: float
    log_denominator: float

    __test__ = False  # keep pytest from collecting this class

    def J(self, lam, P=None, geo=None):
        """J_lam at this point; with P and geo the measure-weighted denominator is used."""
        ld = self.log_denominator if P is None else log_denominator(geo, P, self.field)
        return 0.5 * self.energy - lam * ld


def log_integral_exp(geo: DiscreteGeometry, v):
    """log of the plain volume integral of exp(v)."""
    return float(logsumexp(v + np.log(geo.volume_weights)))


def _point(geo, v, family, params, P):
    energy = geo.energy(v)
    ld = log_integral_exp(geo, v) if P is None else log_denominator(geo, P, v)
    return TestFamilyPoint(family, params, v, energy, ld)


# curves ----------------------------------------------------------------------

def mid_circle(geo: DiscreteGeometry, n=512):
    """Closed polyline along the middle circle of an annulus (or a disc)."""
    if geo.kind not in ("annulus", "disc"):
        raise GeometryError("mid_circle needs a polar geometry")
    r = 0.5 * (geo.grid["r_in"] + geo.grid["r_out"])
    t = np.arange(n) * TWO_PI / n
    return np.column_stack([r * np.cos(t), r * np.sin(t)])


def curve_point(curve, theta):
    """Point at arclength fraction theta / 2pi along a closed polyline."""
    c = np.asarray(curve, dtype=float)
    seg = np.diff(np.vstack([c, c[:1]]), axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    s = (float(theta) % TWO_PI) / TWO_PI * cum[-1]
    k = min(int(np.searchsorted(cum, s, side="right")) - 1, len(c) - 1)
    t = (s - cum[k]) / lengths[k] if lengths[k] > 0 else 0.0
    return c[k] + t * seg[k]


def default_eps0(geo):
    return 0.45 * (geo.grid["r_out"] - geo.grid["r_in"])


def truncated_green_family(geo: DiscreteGeometry, curve, r, theta, eps0=None, P=None):
    """v_{r,theta}: 4 log(1/max(|X|, 1-r)) in the unit ball of X = (x - gamma(theta)) / eps0, 0 outside."""
    if geo.kind != "annulus":
        raise GeometryError("the truncated Green family lives on the annulus")
    if not (0.0 <= r < 1.0):
        raise GeometryError(f"r must lie in [0, 1), got {r}")
    eps0 = default_eps0(geo) if eps0 is None else float(eps0)
    c = np.asarray(curve, dtype=float)
    for pt in c:
        if not geo.contains(pt, margin=eps0):
            raise GeometryError(f"ball of radius {eps0} around curve point {tuple(pt)} leaves the domain")
    g = curve_point(c, theta)
    X = geo.distances(g) / eps0
    v = 4.0 * np.log(1.0 / np.clip(X, 1.0 - r, 1.0))
    v[~geo.interior_mask] = 0.0
    return _point(geo, v, "truncated_green", {"r": float(r), "theta": float(theta), "center": g.tolist()}, P)


def bubble_profile(d, eps, r0):
    """log(eps^2 / (eps^2 + d^2)^2), frozen at its value on |d| = r0."""
    dc = np.minimum(d, r0)
    return math.log(eps * eps) - 2.0 * np.log(eps * eps + dc * dc)


def bubble_family(geo: DiscreteGeometry, p0, r0, eps, P=None, check_resolution=True):
    """Bubble of width eps at p0.

    Torus: the capped profile minus its mean.  Dirichlet domains: the same
    profile shifted by its cap value, i.e. 2 log((eps^2 + r0^2) / (eps^2 + d^2))
    inside B(p0, r0) and zero outside, which needs B(p0, r0) inside the domain.
    """
    eps = float(eps)
    r0 = float(r0)
    p0 = np.asarray(p0, dtype=float)
    if eps <= 0 or r0 <= 0:
        raise GeometryError("eps and r0 must be positive")
    if eps > r0:
        raise GeometryError(f"eps={eps} exceeds r0={r0}")
    if check_resolution:
        h = geo.local_spacing(p0)
        if eps < 2.0 * h:
            raise ResolutionError(f"eps={eps:g} is below twice the local mesh spacing {h:.4g}; refine the grid")
    if geo.is_torus:
        if r0 > 0.5 * min(geo.periods):
            raise GeometryError(f"r0={r0} exceeds half the shortest period")
        v = bubble_profile(geo.distances(p0), eps, r0)
        v = v - geo.mean(v)
    else:
        if not geo.contains(p0) or geo.distance_to_boundary(p0) < r0:
            raise GeometryError(f"ball B({tuple(p0)}, {r0}) is not inside the domain")
        v = bubble_profile(geo.distances(p0), eps, r0) - bubble_profile(np.array(r0), eps, r0)
        v[~geo.interior_mask] = 0.0
    return _point(geo, v, "bubble", {"eps": eps, "r0": r0, "center": p0.tolist()}, P)


def green_bubble(geo: DiscreteGeometry, p0, eps, P=None, check_resolution=True):
    """Bubble matched to the Green's function: log(eps^2 / (eps^2 + exp(-4 pi G(., p0)))^2).

    Near p0 exp(-4 pi G) ~ c |x - p0|^2, so the core is the standard bubble;
    away from p0 the profile equals 8 pi G up to a constant.  Its O(1) term in
    J is much smaller than for the capped profile, which matters just above
    the critical parameter.  Torus only (mean subtracted).
    """
    from .geometry import green_function
    if not geo.is_torus:
        raise GeometryError("green_bubble is defined on the torus")
    p0 = np.asarray(p0, dtype=float)
    if check_resolution and eps < 2.0 * geo.local_spacing(p0):
        raise ResolutionError(f"eps={eps:g} is below twice the mesh spacing {geo.local_spacing(p0):.4g}")
    G = green_function(geo, p0).values
    v = math.log(eps * eps) - 2.0 * np.log(eps * eps + np.exp(-4.0 * math.pi * G))
    v = v - geo.mean(v)
    return _point(geo, v, "green_bubble", {"eps": float(eps), "center": p0.tolist()}, P)


def bubble_sweep(geo, p0, r0, eps_values, P=None):
    return [bubble_family(geo, p0, r0, e, P=P) for e in eps_values]
