"""Discrete domains: rectangle, disc, annulus (Dirichlet) and the flat torus.

Every geometry is a weighted graph: a symmetric stiffness matrix ``K`` built
from edge conductances and a vector of node volumes ``w``.  Then

    energy(u)   = u^T K u            (discrete Dirichlet energy)
    Lap u       = -(K u) / w         (on interior nodes)

so the discrete Laplacian is self-adjoint in the volume-weighted inner
product and integration by parts holds exactly.  Rectangle and torus use the
5-point stencil, disc and annulus a finite-volume polar grid.

Fields are plain float arrays aligned with ``geo.nodes``; node ordering is
row-major in (x, y) for Cartesian grids and ring-major (r, theta) for polar
ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from .errors import (ConstraintError, GeometryError, IncompatibleDataError,
                     SolverError)

KINDS = ("rectangle", "disc", "annulus", "flat_torus")
TWO_PI = 2.0 * math.pi


def _assemble(n, a, b, c):
    """Stiffness matrix from edge list (a, b) with conductances c."""
    a = np.asarray(a)
    b = np.asarray(b)
    c = np.asarray(c, dtype=float)
    rows = np.concatenate([a, b, a, b])
    cols = np.concatenate([a, b, b, a])
    vals = np.concatenate([c, c, -c, -c])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


@dataclass(eq=False)
class DiscreteGeometry:
    kind: str
    resolution: int
    params: dict
    nodes: np.ndarray
    volume_weights: np.ndarray
    interior_mask: np.ndarray
    stiffness: sp.csr_matrix
    h: float
    grid: dict = field(default_factory=dict, repr=False)
    solver: str = "direct"

    def __post_init__(self):
        self.conformal_factor_log = np.zeros(self.n)
        self.total_volume = float(self.volume_weights.sum())
        self._lu = None

    # basic facts ---------------------------------------------------------
    @property
    def n(self):
        return self.nodes.shape[0]

    @property
    def setting(self):
        return "torus" if self.kind == "flat_torus" else "dirichlet"

    @property
    def is_torus(self):
        return self.kind == "flat_torus"

    @property
    def boundary_index(self):
        return np.flatnonzero(~self.interior_mask)

    @property
    def interior_index(self):
        return np.flatnonzero(self.interior_mask)

    @cached_property
    def laplacian(self):
        """Sparse matrix of ``apply_laplacian`` (identity rows on the boundary)."""
        winv = sp.diags(np.where(self.interior_mask, -1.0 / self.volume_weights, 0.0))
        L = (winv @ self.stiffness).tolil()
        for i in self.boundary_index:
            L.rows[i] = [int(i)]
            L.data[i] = [1.0]
        return L.tocsr()

    @property
    def periods(self):
        return self.grid.get("periods")

    def diameter(self):
        if self.kind == "rectangle":
            return math.hypot(*self.grid["size"])
        if self.kind in ("disc", "annulus"):
            return 2.0 * self.grid["r_out"]
        return 0.5 * math.hypot(*self.periods)

    # quadrature ----------------------------------------------------------
    def integrate(self, f):
        return float(np.dot(self.volume_weights, f))

    def mean(self, f):
        return self.integrate(f) / self.total_volume

    def inner_w(self, a, b):
        return float(np.dot(self.volume_weights * a, b))

    def energy(self, u):
        """Discrete Dirichlet energy, the squared H-norm."""
        return float(u @ (self.stiffness @ u))

    def inner_h(self, a, b):
        return float(a @ (self.stiffness @ b))

    # admissibility -------------------------------------------------------
    def project(self, u):
        """Nearest admissible field: zero boundary values or zero mean."""
        u = np.array(u, dtype=float)
        if self.is_torus:
            return u - self.mean(u)
        u[~self.interior_mask] = 0.0
        return u

    def check_admissible(self, u, tol=1e-10, name="u"):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n,):
            raise ConstraintError(f"{name} has shape {u.shape}, expected ({self.n},)")
        if not np.all(np.isfinite(u)):
            raise ConstraintError(f"{name} has non-finite values")
        scale = max(1.0, float(np.max(np.abs(u))))
        if self.is_torus:
            m = self.mean(u)
            if abs(m) > tol * scale:
                raise ConstraintError(f"{name} has mean {m:.3e}; torus fields must have zero mean")
        else:
            b = np.max(np.abs(u[~self.interior_mask]), initial=0.0)
            if b > tol * scale:
                raise ConstraintError(f"{name} is {b:.3e} on the boundary; Dirichlet fields must vanish there")
        return u

    # point queries -------------------------------------------------------
    def contains(self, p, margin=0.0):
        x, y = float(p[0]), float(p[1])
        if self.kind == "flat_torus":
            return True
        if self.kind == "rectangle":
            lx, ly = self.grid["size"]
            return margin < x < lx - margin and margin < y < ly - margin
        r = math.hypot(x, y)
        return self.grid["r_in"] + margin < r < self.grid["r_out"] - margin if self.kind == "annulus" \
            else r < self.grid["r_out"] - margin

    def distance_to_boundary(self, p):
        x, y = float(p[0]), float(p[1])
        if self.kind == "flat_torus":
            return math.inf
        if self.kind == "rectangle":
            lx, ly = self.grid["size"]
            return min(x, lx - x, y, ly - y)
        r = math.hypot(x, y)
        if self.kind == "disc":
            return self.grid["r_out"] - r
        return min(r - self.grid["r_in"], self.grid["r_out"] - r)

    def local_spacing(self, p=None):
        """Largest grid spacing near p (global spacing when p is None)."""
        if self.kind in ("rectangle", "flat_torus") or p is None:
            return self.h
        r = math.hypot(float(p[0]), float(p[1]))
        return max(self.grid["dr"], r * self.grid["dtheta"])

    def displacement(self, x, p):
        """x - p for arrays of points, wrapped to the nearest image on the torus."""
        d = np.asarray(x, dtype=float) - np.asarray(p, dtype=float)
        if self.is_torus:
            per = np.asarray(self.periods)
            d = d - per * np.floor(d / per + 0.5)
        return d

    def distances(self, p, points=None):
        pts = self.nodes if points is None else np.asarray(points, dtype=float)
        d = self.displacement(pts, p)
        return np.hypot(d[..., 0], d[..., 1])

    def nearest_node(self, p):
        return int(np.argmin(self.distances(p)))

    # Poisson solves ------------------------------------------------------
    def _factor(self):
        if self._lu is None:
            idx = self.interior_index
            kii = self.stiffness[idx][:, idx].tocsc()
            self._kii = kii
            self._lu = spla.splu(kii)
        return self._lu

    @cached_property
    def _torus_symbol(self):
        nx, ny = self.grid["shape"]
        hx, hy = self.grid["spacing"]
        kx = (4.0 / hx**2) * np.sin(np.pi * np.arange(nx) / nx) ** 2
        ky = (4.0 / hy**2) * np.sin(np.pi * np.arange(ny) / ny) ** 2
        lam = kx[:, None] + ky[None, :]
        lam[0, 0] = np.inf
        return lam

    def _solve_dirichlet(self, rhs_i, method):
        lu = self._factor()
        if method == "cg":
            d = self._kii.diagonal()
            M = spla.LinearOperator(self._kii.shape, matvec=lambda v: v / d)
            x, info = spla.cg(self._kii, rhs_i, rtol=1e-13, atol=0.0, M=M, maxiter=20 * rhs_i.size)
            if info != 0:
                raise SolverError("conjugate gradient did not converge", iterations=info)
            return x
        x = lu.solve(rhs_i)
        # one step of iterative refinement; polar grids have wide weight ranges
        x += lu.solve(rhs_i - self._kii @ x)
        return x


def apply_laplacian(geo: DiscreteGeometry, u):
    u = np.asarray(u, dtype=float)
    if u.shape != (geo.n,):
        raise GeometryError(f"field has shape {u.shape}, geometry has {geo.n} nodes")
    out = -(geo.stiffness @ u) / geo.volume_weights
    out[~geo.interior_mask] = u[~geo.interior_mask]
    return out


def solve_poisson(geo: DiscreteGeometry, f, bc=None, method=None):
    """Solve -Lap u = f with u = 0 on the boundary (Dirichlet) or mean zero (torus)."""
    f = np.asarray(f, dtype=float)
    if f.shape != (geo.n,):
        raise GeometryError(f"field has shape {f.shape}, geometry has {geo.n} nodes")
    bc = bc or ("mean_zero" if geo.is_torus else "dirichlet_zero")
    if (bc == "mean_zero") != geo.is_torus:
        raise GeometryError(f"boundary condition {bc!r} does not match geometry {geo.kind!r}")
    if geo.is_torus:
        total = geo.integrate(f)
        scale = max(1.0, geo.integrate(np.abs(f)))
        if abs(total) > 1e-8 * scale:
            raise IncompatibleDataError(f"torus source has integral {total:.3e}; project to mean zero first")
        nx, ny = geo.grid["shape"]
        fh = np.fft.fft2((f - total / geo.total_volume).reshape(nx, ny))
        u = np.real(np.fft.ifft2(fh / geo._torus_symbol)).ravel()
        return u - geo.mean(u)
    method = method or geo.solver
    u = np.zeros(geo.n)
    idx = geo.interior_index
    u[idx] = geo._solve_dirichlet(geo.volume_weights[idx] * f[idx], method)
    return u


def poisson_residual(geo, u, f):
    """Relative residual ||Lap u + f|| / ||f|| in the volume-weighted norm (interior nodes)."""
    r = apply_laplacian(geo, u) + f
    r[~geo.interior_mask] = 0.0
    fn = math.sqrt(geo.inner_w(f, f))
    return math.sqrt(geo.inner_w(r, r)) / fn if fn > 0 else math.sqrt(geo.inner_w(r, r))


# builders -----------------------------------------------------------------

def _rectangle(resolution, params):
    lx = float(params.get("lx", params.get("width", 1.0)))
    ly = float(params.get("ly", params.get("height", 1.0)))
    if lx <= 0 or ly <= 0:
        raise GeometryError("rectangle sides must be positive")
    h0 = max(lx, ly) / resolution
    nx, ny = max(2, round(lx / h0)), max(2, round(ly / h0))
    hx, hy = lx / nx, ly / ny
    X, Y = np.meshgrid(np.linspace(0, lx, nx + 1), np.linspace(0, ly, ny + 1), indexing="ij")
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    wx = np.full(nx + 1, hx)
    wx[[0, -1]] *= 0.5
    wy = np.full(ny + 1, hy)
    wy[[0, -1]] *= 0.5
    w = np.outer(wx, wy).ravel()
    interior = np.zeros((nx + 1, ny + 1), dtype=bool)
    interior[1:-1, 1:-1] = True
    # edges along the boundary carry half a dual face
    cx = np.full((nx, ny + 1), hy / hx)
    cx[:, [0, -1]] *= 0.5
    cy = np.full((nx + 1, ny), hx / hy)
    cy[[0, -1], :] *= 0.5
    a = np.concatenate([idx[:-1, :].ravel(), idx[:, :-1].ravel()])
    b = np.concatenate([idx[1:, :].ravel(), idx[:, 1:].ravel()])
    K = _assemble(idx.size, a, b, np.concatenate([cx.ravel(), cy.ravel()]))
    grid = {"shape": (nx + 1, ny + 1), "spacing": (hx, hy), "size": (lx, ly),
            "axes": (X[:, 0].copy(), Y[0].copy())}
    return np.column_stack([X.ravel(), Y.ravel()]), w, interior.ravel(), K, max(hx, hy), grid


def _torus(resolution, params):
    per = params.get("periods", (params.get("lx", 1.0), params.get("ly", 1.0)))
    lx, ly = float(per[0]), float(per[1])
    if lx <= 0 or ly <= 0:
        raise GeometryError("torus periods must be positive")
    h0 = min(lx, ly) / resolution
    nx, ny = max(4, round(lx / h0)), max(4, round(ly / h0))
    hx, hy = lx / nx, ly / ny
    X, Y = np.meshgrid(np.arange(nx) * hx, np.arange(ny) * hy, indexing="ij")
    idx = np.arange(nx * ny).reshape(nx, ny)
    a = np.concatenate([idx.ravel(), idx.ravel()])
    b = np.concatenate([np.roll(idx, -1, axis=0).ravel(), np.roll(idx, -1, axis=1).ravel()])
    c = np.concatenate([np.full(idx.size, hy / hx), np.full(idx.size, hx / hy)])
    K = _assemble(idx.size, a, b, c)
    w = np.full(idx.size, hx * hy)
    grid = {"shape": (nx, ny), "spacing": (hx, hy), "periods": (lx, ly),
            "axes": (X[:, 0].copy(), Y[0].copy())}
    return np.column_stack([X.ravel(), Y.ravel()]), w, np.ones(idx.size, dtype=bool), K, max(hx, hy), grid


def _polar(radii, ntheta, dr, face_in, face_out, boundary_rings):
    """Finite-volume polar grid.  ``face_in``/``face_out`` are the radii of the
    dual-cell faces of each ring (face_in = 0 for the innermost disc ring)."""
    nr = radii.size
    dth = TWO_PI / ntheta
    th = np.arange(ntheta) * dth
    R, T = np.meshgrid(radii, th, indexing="ij")
    idx = np.arange(nr * ntheta).reshape(nr, ntheta)
    w = (0.5 * (face_out**2 - face_in**2) * dth)[:, None] * np.ones(ntheta)
    # radial edges between ring i and i+1 through the face at face_out[i]
    ar = idx[:-1, :].ravel()
    br = idx[1:, :].ravel()
    cr = np.repeat(face_out[:-1] * dth / np.diff(radii), ntheta)
    # angular edges; face length is the ring's radial extent
    aa = idx.ravel()
    ba = np.roll(idx, -1, axis=1).ravel()
    ca = np.repeat((face_out - face_in) / (radii * dth), ntheta)
    K = _assemble(idx.size, np.concatenate([ar, aa]), np.concatenate([br, ba]), np.concatenate([cr, ca]))
    interior = np.ones((nr, ntheta), dtype=bool)
    interior[boundary_rings, :] = False
    nodes = np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])
    return nodes, w.ravel(), interior.ravel(), K, dth


def _disc(resolution, params):
    R = float(params.get("radius", 1.0))
    if R <= 0:
        raise GeometryError("disc radius must be positive")
    nr = int(resolution)
    ntheta = int(params.get("n_theta", resolution))
    if ntheta < 8:
        raise GeometryError("n_theta must be at least 8")
    dr = R / (nr + 0.5)
    radii = np.append((np.arange(nr) + 0.5) * dr, R)
    face_in = np.append(np.maximum(radii[:-1] - 0.5 * dr, 0.0), R - 0.5 * dr)
    face_out = np.append(radii[:-1] + 0.5 * dr, R)
    nodes, w, interior, K, dth = _polar(radii, ntheta, dr, face_in, face_out, [nr])
    grid = {"polar": True, "radii": radii, "ntheta": ntheta, "dr": dr, "dtheta": dth,
            "r_in": 0.0, "r_out": R}
    return nodes, w, interior, K, dr, grid


def _annulus(resolution, params):
    r_in = float(params.get("r_in", 0.5))
    r_out = float(params.get("r_out", 1.0))
    if not (0 < r_in < r_out):
        raise GeometryError(f"annulus needs 0 < r_in < r_out, got r_in={r_in}, r_out={r_out}")
    nr = max(4, round((r_out - r_in) * resolution / r_out))
    dr = (r_out - r_in) / nr
    r_mid = 0.5 * (r_in + r_out)
    ntheta = int(params.get("n_theta", 4 * max(2, round(TWO_PI * r_mid / dr / 4))))
    radii = r_in + np.arange(nr + 1) * dr
    face_in = np.maximum(radii - 0.5 * dr, r_in)
    face_out = np.minimum(radii + 0.5 * dr, r_out)
    nodes, w, interior, K, dth = _polar(radii, ntheta, dr, face_in, face_out, [0, nr])
    grid = {"polar": True, "radii": radii, "ntheta": ntheta, "dr": dr, "dtheta": dth,
            "r_in": r_in, "r_out": r_out}
    return nodes, w, interior, K, dr, grid


_BUILDERS = {"rectangle": _rectangle, "flat_torus": _torus, "disc": _disc, "annulus": _annulus}


def build_geometry(kind, resolution, params=None, solver="direct"):
    params = dict(params or {})
    if kind not in _BUILDERS:
        raise GeometryError(f"unknown geometry kind {kind!r}; expected one of {KINDS}")
    if int(resolution) != resolution or resolution < 8:
        raise GeometryError(f"resolution must be an integer >= 8, got {resolution}")
    if solver not in ("direct", "cg"):
        raise GeometryError(f"unknown linear solver {solver!r}")
    nodes, w, interior, K, h, grid = _BUILDERS[kind](int(resolution), params)
    return DiscreteGeometry(kind, int(resolution), params, nodes, w, interior, K, h, grid, solver)


# interpolation --------------------------------------------------------------

def interpolator(geo: DiscreteGeometry, values):
    """Piecewise-linear interpolant of a nodal field, callable on (m, 2) points."""
    v = np.asarray(values, dtype=float)
    g = geo.grid
    if geo.kind == "rectangle":
        f = RegularGridInterpolator(g["axes"], v.reshape(g["shape"]), bounds_error=False, fill_value=None)
        return lambda pts: f(np.atleast_2d(pts))
    if geo.is_torus:
        nx, ny = g["shape"]
        lx, ly = g["periods"]
        V = np.pad(v.reshape(nx, ny), ((0, 1), (0, 1)), mode="wrap")
        ax = (np.append(g["axes"][0], lx), np.append(g["axes"][1], ly))
        f = RegularGridInterpolator(ax, V)

        def call(pts):
            pts = np.atleast_2d(pts)
            return f(np.column_stack([np.mod(pts[:, 0], lx), np.mod(pts[:, 1], ly)]))
        return call
    nt = g["ntheta"]
    V = v.reshape(-1, nt)
    radii = g["radii"]
    if geo.kind == "disc":
        # virtual centre row: the ring-0 average
        V = np.vstack([np.full(nt, V[0].mean()), V])
        radii = np.append(0.0, radii)
    V = np.pad(V, ((0, 0), (0, 1)), mode="wrap")
    th = np.append(np.arange(nt) * g["dtheta"], TWO_PI)
    f = RegularGridInterpolator((radii, th), V, bounds_error=False, fill_value=None)

    def call(pts):
        pts = np.atleast_2d(pts)
        r = np.hypot(pts[:, 0], pts[:, 1])
        t = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), TWO_PI)
        return f(np.column_stack([r, t]))
    return call


# Green's functions ----------------------------------------------------------

@dataclass
class GreenFunction:
    source: np.ndarray
    source_index: int
    values: np.ndarray
    regular_part_at_source: float
    regular_values: np.ndarray = field(repr=False)

    def regular_interpolant(self, geo):
        return interpolator(geo, self.regular_values)


def point_source(geo: DiscreteGeometry, p):
    """Unit point mass near p as a nodal density, plus its effective location.

    The mass sits on the nearest node; on the disc a point inside the first
    ring is spread evenly over that ring so the source stays centred.
    """
    p = np.asarray(p, dtype=float)
    if not geo.contains(p):
        raise GeometryError(f"point {tuple(p)} is not inside the {geo.kind}")
    f = np.zeros(geo.n)
    if geo.kind == "disc" and math.hypot(*p) < geo.grid["dr"]:
        nt = geo.grid["ntheta"]
        f[:nt] = 1.0 / (nt * geo.volume_weights[0])
        return f, np.zeros(2), 0
    k = geo.nearest_node(p)
    if not geo.interior_mask[k]:
        raise GeometryError(f"point {tuple(p)} is closer to the boundary than one grid cell")
    f[k] = 1.0 / geo.volume_weights[k]
    return f, geo.nodes[k].copy(), k


def green_function(geo: DiscreteGeometry, p, fit_range=(3.0, 8.0)):
    f, src, k = point_source(geo, p)
    if geo.is_torus:
        f = f - 1.0 / geo.total_volume
    G = solve_poisson(geo, f)
    d = geo.distances(src)
    h = geo.local_spacing(src)
    with np.errstate(divide="ignore"):
        reg = G - np.log(1.0 / d) / TWO_PI
    sel = (d >= fit_range[0] * h) & (d <= fit_range[1] * h) & geo.interior_mask
    if sel.sum() < 3:
        raise GeometryError("too few nodes near the source to estimate the regular part")
    # plane fit a + b.dx keeps the gradient of the regular part at the source
    disp = geo.displacement(geo.nodes, src)
    A = np.column_stack([np.ones(sel.sum()), disp[sel]])
    coef, *_ = np.linalg.lstsq(A, reg[sel], rcond=None)
    h0 = float(coef[0])
    near = d < fit_range[0] * h
    reg[near] = coef[0] + disp[near] @ coef[1:]
    if not geo.is_torus:
        reg[~geo.interior_mask] = G[~geo.interior_mask] - np.log(1.0 / d[~geo.interior_mask]) / TWO_PI
    return GreenFunction(src, k, G, h0, reg)


def disc_green_exact(x, p, radius=1.0):
    """Closed-form Green's function of the disc of given radius."""
    x = np.atleast_2d(np.asarray(x, dtype=float)) / radius
    p = np.asarray(p, dtype=float) / radius
    d = np.hypot(*(x - p).T)
    with np.errstate(divide="ignore"):
        if np.hypot(*p) == 0.0:
            return np.log(1.0 / d) / TWO_PI
        pn2 = p @ p
        pstar = p / pn2
        d2 = math.sqrt(pn2) * np.hypot(*(x - pstar).T)
        return (np.log(1.0 / d) - np.log(1.0 / d2)) / TWO_PI


def disc_regular_gradient_exact(p, radius=1.0):
    """Gradient in x of the disc regular part h(x, p) at x = p."""
    p = np.asarray(p, dtype=float) / radius
    return -p / (1.0 - p @ p) / TWO_PI / radius


# spectra --------------------------------------------------------------------

def first_eigenvalue(geo: DiscreteGeometry, rtol=1e-10, max_iter=500, seed=0):
    """Smallest Dirichlet eigenvalue, or the first non-zero one on the torus.

    Inverse iteration with the Poisson solver; constants are projected out on
    the torus.  Returns the Rayleigh quotient, which converges at twice the
    rate of the eigenvector.
    """
    rng = np.random.default_rng(seed)
    x = geo.project(rng.standard_normal(geo.n))
    mu_old = np.inf
    for it in range(max_iter):
        x = solve_poisson(geo, geo.project(x))
        x /= math.sqrt(geo.inner_w(x, x))
        mu = geo.energy(x)
        if abs(mu - mu_old) <= rtol * mu:
            return mu
        mu_old = mu
    raise SolverError(f"inverse iteration did not converge in {max_iter} iterations", iterations=max_iter)


def geodesic_distance(geo: DiscreteGeometry, p, q):
    d = geo.displacement(np.asarray(q, dtype=float), np.asarray(p, dtype=float))
    return float(math.hypot(d[0], d[1]))
