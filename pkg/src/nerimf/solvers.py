"""Newton, continuation and subcritical minimisation for the Euler-Lagrange equation.

All iterations work with the Riesz form of the equation,

    F(u, lam) = u - lam * S(rho(u)) = 0,

whose Jacobian I - lam * S B(u) is a compact perturbation of the identity;
Krylov solves on it need no further preconditioning.  The minimax engine
lives in :mod:`nerimf.minimax`.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import BifurcationSuspected, SolverError
from .functional import (forcing, linearized, log_denominator, moments,
                         residual_norm, riesz_gradient, value)
from .geometry import solve_poisson

log = logging.getLogger(__name__)

EIGHT_PI = 8.0 * math.pi


@dataclass
class ContinuationConfig:
    lam_start: float = 1.0
    lam_end: float = EIGHT_PI
    ds: float = 0.5
    ds_min: float = 1e-5
    ds_max: float = 4.0
    max_points: int = 200
    max_u_stop: float = 500.0


@dataclass
class SolveConfig:
    newton_tol: float = 1e-10
    max_newton: int = 50
    backtrack: float = 0.5
    min_step: float = 1e-8
    krylov_restart: int = 60
    krylov_maxiter: int = 400
    continuation: ContinuationConfig = field(default_factory=ContinuationConfig)
    path_points: int = 64
    deformation_eps: tuple = (1e-1, 1e-6)
    max_minimax_iter: int = 3000
    stagnation_tol: float = 1e-9
    stagnation_window: int = 20

    def __post_init__(self):
        if isinstance(self.continuation, dict):
            self.continuation = ContinuationConfig(**self.continuation)
        if self.newton_tol <= 0 or self.min_step <= 0 or not (0 < self.backtrack < 1):
            raise ValueError("tolerances must be positive and the backtracking factor in (0, 1)")
        c = self.continuation
        if c.lam_start < 0 or c.lam_end <= 0 or c.ds <= 0 or c.ds_min <= 0:
            raise ValueError("continuation range and steps must be positive")
        self.deformation_eps = tuple(float(e) for e in self.deformation_eps)


def _krylov(op, rhs, rtol, cfg, n):
    A = spla.LinearOperator((n, n), matvec=op, dtype=float)
    x, info = spla.gmres(A, rhs, rtol=rtol, atol=0.0, restart=cfg.krylov_restart, maxiter=cfg.krylov_maxiter)
    if info != 0:
        rel = np.linalg.norm(op(x) - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if rel > 1e-2:
            raise BifurcationSuspected(
                f"Krylov solve stagnated at relative residual {rel:.2e}; the linearised operator looks singular",
                iterations=info)
    return x


@dataclass
class NewtonResult:
    u: np.ndarray
    residual: float
    iterations: int
    history: list


def newton_solve(geo, P, lam, u0, setting=None, config: SolveConfig = None, tol=None):
    """Damped Newton on F(u) = 0 with GMRES steps and residual backtracking."""
    cfg = config or SolveConfig()
    tol = cfg.newton_tol if tol is None else tol
    if setting is not None and setting != geo.setting:
        raise SolverError(f"setting {setting!r} does not match geometry {geo.kind!r}")
    u = geo.project(geo.check_admissible(u0, tol=1e-8, name="u0"))
    F = riesz_gradient(geo, P, lam, u)
    res = math.sqrt(max(geo.energy(F), 0.0))
    history = [res]
    for it in range(cfg.max_newton + 1):
        if res <= tol:
            return NewtonResult(u, res, it, history)
        if it == cfg.max_newton:
            break
        op, _ = linearized(geo, P, lam, u)
        d = _krylov(op, -F, max(1e-13, min(1e-3, 0.1 * res)), cfg, geo.n)
        t = 1.0
        while True:
            un = u + t * d
            try:
                Fn = riesz_gradient(geo, P, lam, un)
                rn = math.sqrt(max(geo.energy(Fn), 0.0))
            except (FloatingPointError, ValueError):
                rn = math.inf
            if rn < (1.0 - 1e-4 * t) * res or (rn <= tol):
                break
            t *= cfg.backtrack
            if t < cfg.min_step:
                raise SolverError(f"line search failed at residual {res:.3e}", iterations=it)
        u, F, res = un, Fn, rn
        history.append(res)
    raise SolverError(f"Newton did not converge in {cfg.max_newton} iterations (residual {res:.3e})",
                      iterations=cfg.max_newton)


# subcritical minimisation -----------------------------------------------------

@dataclass
class MinimizeResult:
    status: str                 # "converged" or "unbounded_below"
    u: np.ndarray | None
    J: float
    residual: float
    iterations: int
    J_history: list
    reason: str = ""


def node_mass_fraction(geo, P, u, cells=2.0):
    """Share of the normalised exponential measure within ``cells`` mesh spacings of its heaviest node.

    A ball rather than a single node: on polar grids a centred collapse
    spreads over the whole innermost ring.
    """
    m = moments(geo, P, u)
    w = geo.volume_weights * m.weights()
    k = int(np.argmax(w))
    p = geo.nodes[k]
    return float(w[geo.distances(p) <= cells * geo.local_spacing(p)].sum())


def minimize_subcritical(geo, P, lam, u0=None, config: SolveConfig = None, max_iter=2000,
                         switch_tol=1e-4, concentration=0.5):
    """Steepest descent in the energy inner product with Armijo steps, then Newton.

    When J keeps decreasing while the exponential measure collapses onto a
    few grid cells (or J drops below -1e12) the functional is reported as
    unbounded below: the discrete functional is always bounded, so mesh-scale
    collapse is the observable sign of the continuum -infinity.
    """
    cfg = config or SolveConfig()
    if lam >= EIGHT_PI:
        warnings.warn(f"lambda={lam:.4f} >= 8*pi; the functional need not be bounded below", RuntimeWarning)
    u = np.zeros(geo.n) if u0 is None else geo.project(geo.check_admissible(u0, tol=1e-8, name="u0"))
    if lam == 0:
        return MinimizeResult("converged", np.zeros(geo.n), 0.5 * 0.0 - 0.0, 0.0, 0, [0.0])
    J = value(geo, P, lam, u)
    J0 = J
    hist = [J]
    t = 1.0
    g = riesz_gradient(geo, P, lam, u)
    gn2 = geo.energy(g)
    it = 0
    for it in range(1, max_iter + 1):
        if math.sqrt(gn2) <= switch_tol:
            break
        t = min(1.0, 2.0 * t)
        while True:
            un = u - t * g
            Jn = value(geo, P, lam, un)
            if Jn <= J - 1e-4 * t * gn2:
                break
            t *= 0.5
            if t < 1e-12:
                break
        if t < 1e-12:
            break
        u, J = un, Jn
        hist.append(J)
        if J < -1e12:
            return MinimizeResult("unbounded_below", None, J, math.nan, it, hist, "J below -1e12")
        if J < J0 and node_mass_fraction(geo, P, u) >= concentration:
            return MinimizeResult("unbounded_below", None, J, math.nan, it, hist,
                                  "exponential measure collapsed to mesh scale while J decreased")
        g = riesz_gradient(geo, P, lam, u)
        gn2 = geo.energy(g)
    nr = newton_solve(geo, P, lam, u, config=cfg)
    Jf = value(geo, P, lam, nr.u)
    return MinimizeResult("converged", nr.u, Jf, nr.residual, it + nr.iterations, hist + [Jf])


# pseudo-arclength continuation -------------------------------------------------

@dataclass
class BranchPoint:
    lam: float
    u: np.ndarray
    energy: float
    J: float
    max_u: float
    residual: float
    tangent_lam: float = math.nan
    ds_next: float = math.nan      # adapted step size after this point, so a resumed run continues identically

    def record(self):
        return {"lambda": self.lam, "energy": self.energy, "J_value": self.J, "max_u": self.max_u,
                "residual": self.residual, "dlambda_ds": self.tangent_lam, "ds_next": self.ds_next}


@dataclass
class Branch:
    points: list = field(default_factory=list)
    turning_points: list = field(default_factory=list)
    stop_reason: str = ""

    @property
    def lambdas(self):
        return np.array([p.lam for p in self.points])

    @property
    def max_us(self):
        return np.array([p.max_u for p in self.points])


def _make_point(geo, P, lam, u, res, tl=math.nan):
    E = geo.energy(u)
    return BranchPoint(float(lam), u, E, 0.5 * E - lam * log_denominator(geo, P, u), float(np.max(u)), res, tl)


def _hnorm2(geo, du, dl):
    return geo.energy(du) + dl * dl


def _lam_derivative(geo, P, u):
    return -solve_poisson(geo, forcing(geo, moments(geo, P, u).rho))


def _tangent(geo, P, lam, u, cfg, orient=None):
    op, _ = linearized(geo, P, lam, u)
    Fl = _lam_derivative(geo, P, u)
    du = _krylov(op, -Fl, 1e-10, cfg, geo.n)
    s = math.sqrt(_hnorm2(geo, du, 1.0))
    tu, tl = du / s, 1.0 / s
    if orient is not None and geo.inner_h(tu, orient[0]) + tl * orient[1] < 0:
        tu, tl = -tu, -tl
    return tu, tl


def _corrector(geo, P, u, lam, tu, tl, cfg, tol, max_iter=10):
    """Newton on the bordered system F = 0, <t, x - x_pred> = 0."""
    n = geo.n
    Ktu = geo.stiffness @ tu
    u0, l0 = u.copy(), lam
    res = math.inf
    for k in range(max_iter + 1):
        F = riesz_gradient(geo, P, lam, u)
        res = math.sqrt(max(geo.energy(F), 0.0))
        N = float(Ktu @ (u - u0)) + tl * (lam - l0)
        if res <= tol and abs(N) <= 1e-10:
            return u, lam, res, k
        if k == max_iter or not math.isfinite(res):
            break
        op_u, _ = linearized(geo, P, lam, u)
        Fl = _lam_derivative(geo, P, u)

        def op(z):
            return np.append(op_u(z[:n]) + z[n] * Fl, Ktu @ z[:n] + tl * z[n])

        z = _krylov(op, -np.append(F, N), max(1e-13, min(1e-3, 0.1 * res)), cfg, n + 1)
        u = u + z[:n]
        lam = lam + z[n]
        if geo.is_torus:
            u = geo.project(u)
    raise SolverError(f"corrector failed (residual {res:.2e})", iterations=max_iter)


def continue_branch(geo, P, config: SolveConfig = None, setting=None, u0=None, on_point=None,
                    resume: Branch = None):
    """Pseudo-arclength continuation in (lam, u) with a secant predictor.

    Stops at lam_end, after max_points, when max u exceeds max_u_stop (or the
    overflow guard 500), or when the step size underflows.  ``on_point`` is
    called with each accepted BranchPoint (used for streaming JSON lines).
    """
    cfg = config or SolveConfig()
    cc = cfg.continuation
    if setting is not None and setting != geo.setting:
        raise SolverError(f"setting {setting!r} does not match geometry {geo.kind!r}")
    guard = min(cc.max_u_stop, 500.0)
    br = resume if resume is not None else Branch()
    if not br.points:
        start = np.zeros(geo.n) if u0 is None else u0
        nr = newton_solve(geo, P, cc.lam_start, start, config=cfg)
        _, tl = _tangent(geo, P, cc.lam_start, nr.u, cfg)
        p = _make_point(geo, P, cc.lam_start, nr.u, nr.residual, tl)
        p.ds_next = cc.ds
        br.points.append(p)
        if on_point:
            on_point(p)
    ds = br.points[-1].ds_next
    if not (math.isfinite(ds) and ds > 0):
        ds = cc.ds
    while True:
        cur = br.points[-1]
        if len(br.points) >= cc.max_points:
            br.stop_reason = "max_points"
            break
        if cur.lam >= cc.lam_end:
            br.stop_reason = "lambda_end"
            break
        if cur.max_u > guard:
            br.stop_reason = "max_u"
            break
        if len(br.points) >= 2:
            prev = br.points[-2]
            du, dl = cur.u - prev.u, cur.lam - prev.lam
            s = math.sqrt(_hnorm2(geo, du, dl))
            tu, tl = du / s, dl / s
        else:
            tu, tl = _tangent(geo, P, cur.lam, cur.u, cfg, orient=(np.zeros(geo.n), 1.0))
        while True:
            try:
                u, lam, res, k = _corrector(geo, P, cur.u + ds * tu, cur.lam + ds * tl, tu, tl, cfg,
                                            cfg.newton_tol)
                if lam <= 0:
                    raise SolverError("continuation left lambda > 0")
                break
            except SolverError as exc:
                ds *= 0.5
                log.debug("step rejected (%s); ds -> %g", exc, ds)
                if ds < cc.ds_min:
                    br.stop_reason = "step_underflow"
                    return br
        dl_ds = (lam - cur.lam) / ds
        p = _make_point(geo, P, lam, u, res, dl_ds)
        if len(br.points) >= 2 and np.sign(dl_ds) != np.sign(cur.tangent_lam) and dl_ds != 0:
            br.turning_points.append(len(br.points) - 1)
        if k <= 3:
            ds = min(1.5 * ds, cc.ds_max)
        elif k >= 7:
            ds = max(0.5 * ds, cc.ds_min)
        p.ds_next = ds
        br.points.append(p)
        if on_point:
            on_point(p)
    return br
