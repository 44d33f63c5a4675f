"""Numerical mountain pass on the torus with a Struwe-type deformation.

A path is a list of fields from 0 to a far endpoint with J < 0.  Each sweep
pushes the points whose level is within 2*eps of the path maximum c along
-g/|g|_H, scaled by sqrt(eps) and by the cut-off

    xi(s) = 0 for s <= -2,  1 for s >= -1,  linear in between,  s = (J - c)/eps,

then redistributes the points by H-arclength.  A per-point backtracking
guard makes every accepted move non-increasing in J, so the deformation
never raises the path maximum; the re-spline that follows may reveal a
slightly higher level between old nodes, which is then part of the path.  The maximiser is finally polished by Newton.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, GeometryViolated, SolverError
from .families import bubble_family
from .functional import riesz_gradient, value
from .geometry import first_eigenvalue, solve_poisson
from .measure import moment
from .solvers import EIGHT_PI, SolveConfig, newton_solve

log = logging.getLogger(__name__)


@dataclass
class MinimaxResult:
    lam: float
    c_lambda: float
    path: list
    critical_point: np.ndarray | None
    residual: float
    history: list = field(default_factory=list)
    status: str = "converged"          # converged | ps_failure | trivial
    J_critical: float = math.nan
    path_gap: float = 0.0              # path max before polish minus J at the polished point
    window: tuple = (math.nan, math.nan)

    def record(self):
        return {"lambda": self.lam, "c_lambda": self.c_lambda, "residual": self.residual,
                "status": self.status, "J_critical": self.J_critical, "path_gap": self.path_gap,
                "window": list(self.window), "iterations": len(self.history)}


def cutoff(s):
    return np.clip(s + 2.0, 0.0, 1.0)


def mountain_pass_window(geo, P):
    """(8 pi, mu_1 |M| / int alpha^2 P): the range where the geometry is guaranteed."""
    m2 = moment(P, 2)
    upper = math.inf if m2 == 0 else first_eigenvalue(geo) * geo.total_volume / m2
    return EIGHT_PI, upper


def far_endpoint(geo, P, lam, center=None, eps_values=None, scales=(1.0, 1.1, 1.2)):
    """A bubble (times a scale >= 1) with J_lam < 0, or GeometryViolated.

    Green-matched bubbles are tried first, then capped ones with r0 at half
    the shortest period; eps runs from coarse to the resolvable floor 2h.
    """
    from .families import green_bubble
    per = min(geo.periods)
    center = np.array(geo.periods) / 2.0 if center is None else np.asarray(center, dtype=float)
    floor = 2.0 * geo.local_spacing(center)
    if eps_values is None:
        eps_values = [e for e in 0.2 * per * 0.8 ** np.arange(40) if e >= floor]
    best = None
    for make in (lambda e: green_bubble(geo, center, e).field,
                 lambda e: bubble_family(geo, center, 0.5 * per, e).field):
        for eps in eps_values:
            try:
                v = make(eps)
            except GeometryError:
                continue
            for s in scales:
                J = value(geo, P, lam, s * v)
                if best is None or J < best[0]:
                    best = (J, eps)
                if J < 0:
                    return s * v, J
    if best is None:
        raise GeometryViolated(f"no resolvable bubble: eps would have to be below {floor:.3g}")
    raise GeometryViolated(f"no bubble endpoint with J < 0 found at lambda={lam} "
                           f"(best J={best[0]:.4g}); the mountain-pass geometry fails")


def _respline(geo, path):
    """Redistribute interior points uniformly in H-arclength (linear interpolation)."""
    seg = [math.sqrt(max(geo.energy(b - a), 0.0)) for a, b in zip(path[:-1], path[1:])]
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] == 0:
        return list(path)
    targets = np.linspace(0.0, cum[-1], len(path))
    out = [path[0]]
    for s in targets[1:-1]:
        k = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        t = (s - cum[k]) / seg[k] if seg[k] > 0 else 0.0
        out.append((1 - t) * path[k] + t * path[k + 1])
    out.append(path[-1])
    return out


def mountain_pass(geo, P, lam, endpoint_far=None, config: SolveConfig = None, polish_tol=1e-10,
                  nontrivial_factor=10.0, jobs=1):
    cfg = config or SolveConfig()
    if not geo.is_torus:
        raise SolverError("the mountain-pass engine runs in the torus setting")
    window = mountain_pass_window(geo, P)
    if not (window[0] < lam < window[1]):
        warnings.warn(f"lambda={lam:.4f} lies outside the window ({window[0]:.4f}, {window[1]:.4f})",
                      RuntimeWarning)
    if endpoint_far is None:
        endpoint_far, _ = far_endpoint(geo, P, lam)
    endpoint_far = geo.project(geo.check_admissible(endpoint_far, tol=1e-8, name="endpoint_far"))
    J_end = value(geo, P, lam, endpoint_far)
    if J_end >= 0:
        raise GeometryViolated(f"far endpoint has J={J_end:.4g} >= 0")
    npts = cfg.path_points
    path = [t * endpoint_far for t in np.linspace(0.0, 1.0, npts)]
    pool = ThreadPoolExecutor(jobs) if jobs > 1 else None

    def levels(pts):
        if pool is not None:
            return np.array(list(pool.map(lambda x: value(geo, P, lam, x), pts)))
        return np.array([value(geo, P, lam, x) for x in pts])

    J = levels(path)
    eps_hi, eps_lo = cfg.deformation_eps
    eps = eps_hi
    history = []
    best = J.max()
    since = 0
    for it in range(cfg.max_minimax_iter):
        c = J.max()
        k = int(np.argmax(J))
        if k == npts - 1 or k == 0:
            raise GeometryViolated("path maximum sits at an endpoint; no mountain between 0 and the far point")
        active = [i for i in range(1, npts - 1) if J[i] >= c - 2.0 * eps]
        moved = 0.0
        for i in active:
            xi = float(cutoff((J[i] - c) / eps))
            if xi == 0.0:
                continue
            g = riesz_gradient(geo, P, lam, path[i])
            gn = math.sqrt(max(geo.energy(g), 0.0))
            if gn == 0.0:
                continue
            step = math.sqrt(eps) * xi / gn
            for _ in range(40):
                trial = path[i] - step * g
                Jt = value(geo, P, lam, trial)
                if Jt <= J[i]:
                    path[i], J[i] = trial, Jt
                    moved = max(moved, step * gn)
                    break
                step *= 0.5
        c_deformed = float(J.max())
        # reparametrise unconditionally: skipping it lets neighbours drift
        # apart until the discrete path hops over the mountain
        path = _respline(geo, path)
        J = levels(path)
        cmax = J.max()
        history.append((float(cmax), float(moved), float(eps), c_deformed - float(c)))
        if best - cmax > cfg.stagnation_tol:
            best = cmax
            since = 0
        else:
            since += 1
        if since >= cfg.stagnation_window:
            if eps <= eps_lo * (1 + 1e-12):
                break
            eps = max(eps * 0.5, eps_lo)
            since = 0
    if pool is not None:
        pool.shutdown()
    k = int(np.argmax(J))
    top = path[k]
    top_level = float(J[k])
    try:
        nr = newton_solve(geo, P, lam, top, config=cfg, tol=polish_tol)
        crit, res = nr.u, nr.residual
    except SolverError as exc:
        log.warning("Newton polish failed: %s", exc)
        g = riesz_gradient(geo, P, lam, top)
        return MinimaxResult(lam, top_level, path, top, math.sqrt(geo.energy(g)), history, "ps_failure",
                             top_level, 0.0, window)
    Jc = value(geo, P, lam, crit)
    path[k] = crit
    J[k] = Jc
    c_lam = float(J.max())
    status = "converged"
    if math.sqrt(geo.energy(crit)) < nontrivial_factor * cfg.newton_tol:
        status = "trivial"
    return MinimaxResult(lam, c_lam, path, crit, res, history, status, Jc, top_level - Jc, window)


@dataclass
class SmallBallBound:
    rho: float
    quadratic: float        # rho^2/2 (1 - lam int alpha^2 P / (mu_1 |M|))
    sphere_min: float       # smallest J found on the sphere |v| = rho
    n_directions: int

    def check(self, c_lambda, path_sup=math.inf, tol=1e-10):
        """sphere_min <= c_lambda <= path_sup (every path from 0 to the far point crosses the sphere)."""
        return self.sphere_min - tol <= c_lambda <= path_sup + tol


def small_ball_bound(geo, P, lam, rho=0.05, n_random=8, seed=0):
    """Sample J_lam on the sphere |v| = rho: the lowest Fourier mode plus smoothed random directions.

    The lowest mode is the direction where the quadratic part is weakest, so
    for small rho sphere_min tracks the quadratic lower bound.
    """
    if not geo.is_torus:
        raise SolverError("the small-ball bound is a torus statement")
    rng = np.random.default_rng(seed)
    mu1 = first_eigenvalue(geo)
    x = geo.project(rng.standard_normal(geo.n))
    for _ in range(60):
        x = geo.project(solve_poisson(geo, geo.project(x)))
        x /= math.sqrt(geo.energy(x))
    dirs = [x, -x]
    for _ in range(n_random):
        d = geo.project(solve_poisson(geo, geo.project(rng.standard_normal(geo.n))))
        dirs.append(d / math.sqrt(geo.energy(d)))
    vals = [value(geo, P, lam, rho * d) for d in dirs]
    quad = 0.5 * rho ** 2 * (1.0 - lam * moment(P, 2) / (mu1 * geo.total_volume))
    return SmallBallBound(rho, quad, float(min(vals)), len(dirs))


@dataclass
class MonotonicityRow:
    lam: float
    c_lambda: float
    ratio: float
    dc_dlambda: float
    non_increasing: bool


def monotonicity_probe(results, tol=1e-6):
    """Check lam -> c_lam / lam is non-increasing; finite-difference c'_lam."""
    if len(results) < 3:
        return []
    rs = sorted(results, key=lambda r: r.lam)
    lam = np.array([r.lam for r in rs])
    c = np.array([r.c_lambda for r in rs])
    dc = np.gradient(c, lam)
    rows = []
    for i, r in enumerate(rs):
        ok = True
        if i > 0:
            slack = tol + max(abs(rs[i].path_gap), abs(rs[i - 1].path_gap)) / rs[i].lam
            ok = c[i] / lam[i] <= c[i - 1] / lam[i - 1] + slack
        rows.append(MonotonicityRow(float(lam[i]), float(c[i]), float(c[i] / lam[i]), float(dc[i]), bool(ok)))
    return rows
