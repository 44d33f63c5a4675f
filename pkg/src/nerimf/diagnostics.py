"""Blow-up diagnostics: peaks and local masses, concentration function,
baricentre and its degree, stationarity of blow-up points.

mu_u denotes the normalised exponential measure with node weights
w_i * int exp(alpha u_i) P / iint exp(alpha u) P.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import kernels
from .errors import GeometryError
from .families import curve_point, default_eps0, mid_circle, truncated_green_family
from .functional import moments
from .geometry import TWO_PI, green_function, interpolator

EIGHT_PI = 8.0 * math.pi
FOUR_PI = 4.0 * math.pi


def mu_weights(geo, P, u):
    m = moments(geo, P, u)
    return geo.volume_weights * m.weights()


# peaks and masses ---------------------------------------------------------------

@dataclass
class Thresholds:
    drop: float = 5.0                   # peak region: u >= max_u - drop
    absolute: float | None = None       # or u >= absolute, when given
    quant_tol: float = 0.05             # relative to 8 pi
    min_cells: float = 10.0             # ball radius floor, in mesh cells


@dataclass
class Peak:
    location: tuple
    max_u: float
    local_mass: float
    radius: float
    verdict: str
    k: int
    n_nodes: int

    def to_dict(self):
        return {"location": list(self.location), "max_u": self.max_u, "local_mass": self.local_mass,
                "radius": self.radius, "verdict": self.verdict, "k": self.k, "n_nodes": self.n_nodes}


@dataclass
class BlowupReport:
    lam: float
    peaks: list
    total_mass: float
    concentration_samples: list = field(default_factory=list)
    baricenter: tuple | None = None
    stationarity_residual: list = field(default_factory=list)

    def to_dict(self):
        return {"lambda": self.lam, "total_mass": self.total_mass,
                "peaks": [p.to_dict() for p in self.peaks],
                "concentration_samples": [list(s) for s in self.concentration_samples],
                "baricenter": None if self.baricenter is None else list(self.baricenter),
                "stationarity_residual": list(self.stationarity_residual)}


def classify_mass(mass, tol=0.05):
    k = int(round(mass / EIGHT_PI))
    if k >= 1 and abs(mass - EIGHT_PI * k) <= tol * EIGHT_PI:
        return "near_quantized", k
    if mass < FOUR_PI:
        return "below_minimal", 0
    return "other", 0


def _components(geo, mask):
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    A = geo.stiffness[idx][:, idx]
    A = sp.csr_matrix((np.ones_like(A.data), A.indices, A.indptr), shape=A.shape)
    ncomp, labels = connected_components(A, directed=False)
    return [idx[labels == c] for c in range(ncomp)]


def find_peaks(geo, u, thresholds: Thresholds = None):
    """Connected super-level components of u; returns (locations, max values, node sets)."""
    th = thresholds or Thresholds()
    u = np.asarray(u, dtype=float)
    top, bottom = float(u.max()), float(u.min())
    level = th.absolute if th.absolute is not None else top - th.drop
    if bottom >= level or top - bottom < th.drop:
        return []
    mask = (u >= level) & geo.interior_mask
    out = []
    for comp in _components(geo, mask):
        k = comp[np.argmax(u[comp])]
        wts = np.exp(u[comp] - u[k]) * geo.volume_weights[comp]
        d = geo.displacement(geo.nodes[comp], geo.nodes[k])
        loc = geo.nodes[k] + (wts @ d) / wts.sum()
        if geo.is_torus:
            loc = np.mod(loc, geo.periods)
        out.append((loc, float(u[k]), comp))
    out.sort(key=lambda t: -t[1])
    return out


def detect_blowup(geo, P, lam, u=None, thresholds: Thresholds = None):
    """Peaks of u with local masses lam * int_{B_rho} density.

    ``lam`` may also be a branch point (anything with ``.lam`` and ``.u``).
    """
    if u is None:
        lam, u = lam.lam, lam.u
    th = thresholds or Thresholds()
    m = moments(geo, P, u)
    dens = lam * geo.volume_weights * m.rho
    total = float(dens.sum())
    found = find_peaks(geo, u, th)
    peaks = []
    locs = [f[0] for f in found]
    for i, (loc, top, comp) in enumerate(found):
        sep = min((float(np.hypot(*geo.displacement(locs[j], loc))) for j in range(len(locs)) if j != i),
                  default=math.inf)
        rad = min(0.5 * sep, geo.distance_to_boundary(loc))
        if geo.is_torus:
            rad = min(rad, 0.5 * min(geo.periods))
        rad = max(rad, th.min_cells * geo.local_spacing(loc))
        mass = float(dens[geo.distances(loc) < rad].sum())
        verdict, k = classify_mass(mass, th.quant_tol)
        peaks.append(Peak(tuple(float(x) for x in loc), top, mass, rad, verdict, k, int(comp.size)))
    return BlowupReport(float(lam), peaks, total)


def minimal_mass_screen(geo, P, lam, u, drops=(5.0, 4.0, 3.0, 2.0, 1.0)):
    """Re-detect peaks with tightening thresholds.

    Returns the per-level peak lists and whether no below-minimal peak
    survives at the tightest level.
    """
    levels = []
    for d in sorted(drops, reverse=True):
        rep = detect_blowup(geo, P, lam, u, Thresholds(drop=d))
        levels.append({"drop": d, "peaks": [p.to_dict() for p in rep.peaks]})
    final = levels[-1]["peaks"] if levels else []
    ok = all(p["verdict"] != "below_minimal" for p in final)
    return {"levels": levels, "passed": ok}


# concentration function -----------------------------------------------------------

def candidate_centers(geo, spacing, peaks=()):
    """Peaks plus a square grid of the given spacing clipped to the domain."""
    if geo.is_torus:
        lx, ly = geo.periods
        xs, ys = np.arange(0, lx, spacing), np.arange(0, ly, spacing)
    else:
        lo, hi = geo.nodes.min(axis=0), geo.nodes.max(axis=0)
        xs, ys = np.arange(lo[0], hi[0] + spacing, spacing), np.arange(lo[1], hi[1] + spacing, spacing)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    if not geo.is_torus:
        pts = pts[[geo.contains(p) or geo.distance_to_boundary(p) >= -1e-12 for p in pts]]
    if len(peaks):
        pts = np.vstack([np.asarray(peaks, dtype=float).reshape(-1, 2), pts])
    return pts


def concentration_function(geo, P, lam, u, radii, spacing=None, centers=None):
    """Q(r) = max over candidate centres of mu_u(B(x, r)); returns [(r, Q(r))].

    All radii share one candidate set, which keeps Q non-decreasing.
    ``lam`` does not enter mu_u; it is accepted for symmetry with the
    other diagnostics.
    """
    radii = np.sort(np.asarray(radii, dtype=float))
    if radii.size == 0:
        raise ValueError("radii must not be empty")
    mass = mu_weights(geo, P, u)
    if centers is None:
        spacing = spacing or geo.diameter() / 32.0
        peaks = [p[0] for p in find_peaks(geo, u)]
        centers = candidate_centers(geo, spacing, peaks)
    per = geo.periods or (0.0, 0.0)
    bm = kernels.ball_masses(np.ascontiguousarray(geo.nodes[:, 0]), np.ascontiguousarray(geo.nodes[:, 1]),
                             np.ascontiguousarray(mass), np.ascontiguousarray(centers[:, 0]),
                             np.ascontiguousarray(centers[:, 1]), np.ascontiguousarray(radii),
                             float(per[0]), float(per[1]))
    Q = np.minimum(bm.max(axis=0), 1.0)
    return [(float(r), float(q)) for r, q in zip(radii, Q)]


def cover_count(geo, r):
    """Number of squares of side r/sqrt(2) (each inside an r/2-ball) meeting the domain."""
    s = r / math.sqrt(2.0)
    if geo.is_torus:
        lx, ly = geo.periods
        return int(math.ceil(lx / s) * math.ceil(ly / s))
    lo, hi = geo.nodes.min(axis=0), geo.nodes.max(axis=0)
    nx, ny = int(math.ceil((hi[0] - lo[0]) / s)), int(math.ceil((hi[1] - lo[1]) / s))
    ix = np.floor((geo.nodes[:, 0] - lo[0]) / s).clip(0, nx - 1).astype(int)
    iy = np.floor((geo.nodes[:, 1] - lo[1]) / s).clip(0, ny - 1).astype(int)
    return int(np.unique(ix * ny + iy).size)


def cover_bound_check(geo, samples, spacing):
    """Q(r) >= 1/k_r for every sampled r with spacing <= r / sqrt(2)."""
    rows = []
    for r, q in samples:
        if spacing <= r / math.sqrt(2.0):
            k = cover_count(geo, r)
            rows.append((r, q, 1.0 / k, q >= 1.0 / k - 1e-12))
    return rows


# baricentre and degree --------------------------------------------------------------

def baricenter(geo, P, u):
    if geo.is_torus:
        raise GeometryError("the baricentre is defined on bounded domains")
    mw = mu_weights(geo, P, u)
    return tuple(float(x) for x in (mw @ geo.nodes) / mw.sum())


def winding_number(points, center=(0.0, 0.0), degenerate_tol=1e-6):
    pts = np.asarray(points, dtype=float) - np.asarray(center, dtype=float)
    if np.min(np.hypot(pts[:, 0], pts[:, 1])) < degenerate_tol:
        raise GeometryError("loop passes within the degeneracy tolerance of the centre")
    ang = np.arctan2(pts[:, 1], pts[:, 0])
    steps = np.angle(np.exp(1j * np.diff(np.append(ang, ang[0]))))   # closed loop
    total = steps.sum()
    return int(round(total / TWO_PI))


def baricenter_loop(geo, P, r=0.99, n_angles=64, curve=None, eps0=None, family=None):
    """Baricentres of theta -> family(theta) on a uniform angle grid."""
    thetas = np.arange(n_angles) * TWO_PI / n_angles
    if family is None:
        curve = mid_circle(geo) if curve is None else curve
        family = lambda t: truncated_green_family(geo, curve, r, t, eps0=eps0).field
    return thetas, np.array([baricenter(geo, P, family(t)) for t in thetas])


def baricenter_degree(geo, P, r=0.99, n_angles=64, curve=None, eps0=None, family=None, center=(0.0, 0.0)):
    if n_angles < 64:
        raise ValueError("degree sampling needs at least 64 angles")
    _, pts = baricenter_loop(geo, P, r, n_angles, curve, eps0, family)
    return winding_number(pts, center)


def baricenter_tracking(geo, P, r=0.99, n_angles=64, curve=None, eps0=None):
    """max over theta of |m(h(r, theta)) - gamma(theta)|."""
    curve = mid_circle(geo) if curve is None else curve
    thetas, pts = baricenter_loop(geo, P, r, n_angles, curve, eps0)
    target = np.array([curve_point(curve, t) for t in thetas])
    return float(np.max(np.hypot(*(pts - target).T)))


# stationarity -------------------------------------------------------------------

def stationarity_check(geo, peaks, step_cells=3.0):
    """|grad R_i(p_i)| with R_i = h(., p_i) + sum_{j != i} G(., p_j), by central differences.

    ``peaks`` is a list of points or Peak objects.  Each source is snapped to
    the grid exactly as in :func:`green_function`; the gradient is taken at
    the snapped location.  On the torus the conformal factor is zero.
    """
    pts = [np.asarray(p.location if isinstance(p, Peak) else p, dtype=float) for p in peaks]
    greens = [green_function(geo, p) for p in pts]
    out = []
    for i, Gi in enumerate(greens):
        src = Gi.source
        h = step_cells * geo.local_spacing(src)
        if not geo.is_torus and geo.distance_to_boundary(src) <= 2.0 * h:
            raise GeometryError(f"peak at {tuple(src)} is too close to the boundary for the stencil")
        field_i = Gi.regular_values.copy()
        for j, Gj in enumerate(greens):
            if j != i:
                field_i = field_i + Gj.values
        f = interpolator(geo, field_i)
        stencil = src + h * np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        v = f(stencil)
        grad = np.array([v[0] - v[1], v[2] - v[3]]) / (2.0 * h)
        out.append(float(np.hypot(*grad)))
    return out
