"""Empirical checks of the exponential-integrability inequalities.

Each probe returns an :class:`InequalityVerdict`.  ``status`` is
"satisfied", "violated" or "inapplicable" (precondition not met).  For the
sharp-threshold probe "satisfied" means the functional looked bounded below
along the sweep and "violated" means it decreased without bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .families import bubble_family, log_integral_exp
from .functional import log_denominator, moments
from .geometry import solve_poisson

EIGHT_PI = 8.0 * math.pi
REL_TOL = 1e-10


@dataclass
class InequalityVerdict:
    name: str
    inputs: dict
    lhs: float
    rhs: float
    status: str
    margin: float
    details: dict = field(default_factory=dict)

    @property
    def satisfied(self):
        return self.status == "satisfied"

    def to_dict(self):
        return {"name": self.name, "inputs": self.inputs, "lhs": self.lhs, "rhs": self.rhs,
                "status": self.status, "satisfied": self.satisfied, "margin": self.margin,
                "details": self.details}


def _compare(lhs, rhs):
    ok = lhs <= rhs + REL_TOL * abs(rhs)
    return ("satisfied" if ok else "violated"), rhs - lhs


# Brezis-Merle -----------------------------------------------------------------

def brezis_merle_probe(geo, f, eta=0.5):
    """int exp(4 pi (1 - eta) |u| / |f|_1) <= (pi / eta) diam^2 for -Lap u = f, u = 0 on the boundary."""
    if geo.is_torus:
        raise ValueError("the Brezis-Merle estimate is a Dirichlet statement")
    if not (0.0 < eta < 1.0):
        raise ValueError("eta must lie in (0, 1)")
    f = np.asarray(f, dtype=float)
    l1 = geo.integrate(np.abs(f))
    if not l1 > 0:
        raise ValueError("source must have positive L1 norm")
    u = solve_poisson(geo, f)
    expo = 4.0 * math.pi * (1.0 - eta) * np.abs(u) / l1
    lhs = float(np.exp(logsumexp(expo + np.log(geo.volume_weights))))
    rhs = math.pi / eta * geo.diameter() ** 2
    status, margin = _compare(lhs, rhs)
    return InequalityVerdict("brezis_merle", {"eta": eta, "l1": l1}, lhs, rhs, status, margin,
                             {"max_u": float(np.max(np.abs(u)))})


def random_unit_source(geo, rng, n_bumps=None):
    """Non-negative source of unit mass: a few narrow Gaussians plus a point mass or not."""
    n_bumps = n_bumps or int(rng.integers(1, 6))
    f = np.zeros(geo.n)
    inner = geo.interior_index
    for _ in range(n_bumps):
        c = geo.nodes[inner[rng.integers(inner.size)]]
        s = geo.diameter() * 10 ** rng.uniform(-2.5, -0.7)
        f += rng.uniform(0.1, 1.0) * np.exp(-0.5 * (geo.distances(c) / s) ** 2)
    if rng.random() < 0.3:
        k = inner[rng.integers(inner.size)]
        f[k] += rng.uniform(0.5, 2.0) / geo.volume_weights[k]
    f[~geo.interior_mask] = 0.0
    return f / geo.integrate(f)


# sharp threshold ------------------------------------------------------------------

def family_log_parameter(point):
    p = point.parameters
    if "eps" in p:
        return math.log(1.0 / p["eps"])
    return math.log(1.0 / (1.0 - p["r"]))


def sharp_mt_probe(geo, P, lam, points, delta=0.05, floor=-1e6, slope_tol=0.5):
    """Track J_lam along a concentrating family, fitted against L = log(1/eps).

    Reported slopes:
      slope_J        fitted slope of J_lam itself;
      slope_bound    slope of the upper bound 1/2 E - lam log int exp((1-delta) u)
                     - lam log P([1-delta, 1]);
      predicted_rate 2 (8 pi - lam (1 - 2 delta)), the rate of that bound;
      atom_rate      2 (8 pi - lam), the rate of J for a bubble when P has an
                     atom at 1.
    The verdict is "satisfied" (bounded below) when min J >= floor and the
    tail slope is at least -slope_tol, "violated" (unbounded) otherwise; the
    tolerance absorbs fit noise in the marginal case lam = 8 pi.
    """
    L = np.array([family_log_parameter(p) for p in points])
    order = np.argsort(L)
    L = L[order]
    pts = [points[i] for i in order]
    J = np.array([0.5 * p.energy - lam * log_denominator(geo, P, p.field) for p in pts])
    pmass = P.mass_in(1.0 - delta, 1.0)
    bound = np.array([0.5 * p.energy - lam * log_integral_exp(geo, (1.0 - delta) * p.field) for p in pts])
    bound = bound - (lam * math.log(pmass) if pmass > 0 else -math.inf)
    tail = slice(max(0, len(L) - max(3, len(L) // 2)), None)
    slope_J = float(np.polyfit(L[tail], J[tail], 1)[0])
    slope_bound = float(np.polyfit(L[tail], bound[tail], 1)[0]) if pmass > 0 else math.nan
    predicted = 2.0 * (EIGHT_PI - lam * (1.0 - 2.0 * delta))
    atom_rate = 2.0 * (EIGHT_PI - lam)
    bounded = J.min() >= floor and slope_J >= -slope_tol
    status = "satisfied" if bounded else "violated"
    nonneg = all(bool(np.all(p.field >= -1e-12)) for p in pts)
    details = {
        "L": L.tolist(), "J": J.tolist(), "bound": bound.tolist(),
        "slope_J": slope_J, "slope_bound": slope_bound, "predicted_rate": predicted,
        "atom_rate": atom_rate,
        "rel_err_J_vs_predicted": abs(slope_J - predicted) / abs(predicted) if predicted else math.nan,
        "rel_err_bound_vs_predicted": abs(slope_bound - predicted) / abs(predicted) if predicted else math.nan,
        "rel_err_J_vs_atom_rate": abs(slope_J - atom_rate) / abs(atom_rate) if atom_rate else math.nan,
        "bound_holds": bool(nonneg and np.all(J <= bound + 1e-9 * np.abs(bound))) if pmass > 0 else None,
        "P_mass_near_one": pmass,
    }
    return InequalityVerdict("sharp_MT", {"lambda": lam, "delta": delta, "n": len(pts)},
                             float(J.min()), float(floor), status, float(J.min() - floor), details)


# improved inequality -----------------------------------------------------------------

def _region_mask(geo, region):
    if isinstance(region, np.ndarray) and region.dtype == bool:
        return region
    c, r = region
    return geo.distances(np.asarray(c, dtype=float)) < r


def _region_distance(geo, m1, m2):
    a, b = geo.nodes[m1], geo.nodes[m2]
    if len(a) == 0 or len(b) == 0:
        return math.inf
    if geo.is_torus:
        d, _ = cKDTree(np.mod(b, geo.periods), boxsize=geo.periods).query(np.mod(a, geo.periods))
    else:
        d, _ = cKDTree(b).query(a)
    return float(d.min())


def improved_mt_terms(geo, P, u, omega1, omega2):
    """log iint exp(alpha u) P, the energy, and the mass fractions in both regions."""
    m = moments(geo, P, u)
    mw = geo.volume_weights * m.weights()
    m1, m2 = _region_mask(geo, omega1), _region_mask(geo, omega2)
    return m.log_z, geo.energy(u), float(mw[m1].sum()), float(mw[m2].sum())


def improved_mt_probe(geo, P, u, omega1, omega2, a0=0.25, d0=None, eps=0.01, K=None):
    """iint exp(alpha u) P <= K exp((1/(32 pi) + eps) |grad u|^2), in log form.

    ``omega1``/``omega2`` are boolean node masks or (centre, radius) balls.
    Inapplicable unless dist(omega1, omega2) >= d0 and each region carries at
    least a0 of the normalised exponential mass.
    """
    d0 = 0.25 * geo.diameter() if d0 is None else d0
    m1, m2 = _region_mask(geo, omega1), _region_mask(geo, omega2)
    dist = _region_distance(geo, m1, m2)
    log_z, E, f1, f2 = improved_mt_terms(geo, P, u, m1, m2)
    coef = 1.0 / (32.0 * math.pi) + eps
    inputs = {"a0": a0, "d0": d0, "eps": eps, "K": K, "distance": dist, "fractions": [f1, f2]}
    if dist < d0 or min(f1, f2) < a0:
        return InequalityVerdict("improved_MT", inputs, log_z, math.nan, "inapplicable", math.nan,
                                 {"reason": "distance below d0" if dist < d0 else "mass fraction below a0"})
    if K is None:
        raise ValueError("K must be calibrated first (see calibrate_K)")
    log_rhs = math.log(K) + coef * E
    status, margin = _compare(log_z, log_rhs)
    return InequalityVerdict("improved_MT", inputs, log_z, log_rhs, status, margin,
                             {"energy": E, "log_scale": True})


def calibrate_K(geo, P, fields, eps=0.01):
    """Largest ratio iint exp(alpha u) P / exp((1/(32 pi) + eps) E) over a training family."""
    coef = 1.0 / (32.0 * math.pi) + eps
    logs = [moments(geo, P, u).log_z - coef * geo.energy(u) for u in fields]
    return float(math.exp(max(logs))), logs


def two_bubble_field(geo, centers, r0, eps, weights=(1.0, 1.0)):
    """Sum of two Dirichlet bubbles (fields vanish outside their balls)."""
    v = np.zeros(geo.n)
    for c, w in zip(centers, weights):
        v += w * bubble_family(geo, c, r0, eps).field
    return v
