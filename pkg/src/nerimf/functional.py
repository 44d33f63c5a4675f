"""The variational functional, its derivatives and the nonlinear density.

    J(u) = 1/2 |grad u|^2 - lam * log D(u),
    D(u) = sum_i w_i int exp(alpha u_i) P(d alpha)      (Dirichlet)
         = (1/|M|) * (same sum)                          (torus)

Node-wise measure integrals go through ``kernels.node_moments``; the volume
sum is one more log-sum-exp, so nothing overflows even when alpha*u is in
the thousands.  Gradients are returned as Riesz representatives in the
energy inner product <a, b>_H = a^T K b, i.e. r = u - lam * S(rho) where S
is the Poisson solve (mean-zero right-hand side on the torus).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import ConstraintError, DomainError
from .geometry import DiscreteGeometry, first_eigenvalue, solve_poisson
from .measure import CirculationMeasure, moment


@dataclass
class Moments:
    """Per-node pieces of the measure integrals at a field u."""
    log_s0: np.ndarray     # log int exp(alpha u) P(d alpha)
    ratio1: np.ndarray     # S1 / S0
    ratio2: np.ndarray     # S2 / S0
    log_z: float           # log sum_i w_i S0_i

    def weights(self):
        """exp(log_s0 - log_z): node weights of the normalised exponential measure."""
        return np.exp(self.log_s0 - self.log_z)

    @property
    def rho(self):
        return self.ratio1 * self.weights()

    @property
    def q(self):
        return self.ratio2 * self.weights()


def moments(geo: DiscreteGeometry, P: CirculationMeasure, u) -> Moments:
    u = np.ascontiguousarray(u, dtype=float)
    log_s0, r1, r2 = kernels.node_moments(u, P.alphas, P.log_weights)
    log_z = float(logsumexp(log_s0 + np.log(geo.volume_weights)))
    if not math.isfinite(log_z):
        raise DomainError("log-denominator is not finite")
    return Moments(np.asarray(log_s0), np.asarray(r1), np.asarray(r2), log_z)


def _setting(geo, setting):
    setting = setting or geo.setting
    if setting != geo.setting:
        raise ConstraintError(f"setting {setting!r} does not match geometry {geo.kind!r}")
    return setting


def log_denominator(geo, P, u, m: Moments = None):
    m = m or moments(geo, P, u)
    return m.log_z - (math.log(geo.total_volume) if geo.is_torus else 0.0)


def density(geo, P, u):
    """int alpha exp(alpha u) P / iint exp(alpha u) P dv, node-wise."""
    return moments(geo, P, u).rho


def value(geo, P, lam, u):
    """J_lam(u) without the gradient solve."""
    return 0.5 * geo.energy(u) - lam * log_denominator(geo, P, u)


def forcing(geo, rho):
    """Right-hand side for the Poisson solve: rho, or rho minus its mean on the torus."""
    return rho - geo.mean(rho) if geo.is_torus else rho


def riesz_gradient(geo, P, lam, u, m: Moments = None):
    m = m or moments(geo, P, u)
    r = u - lam * solve_poisson(geo, forcing(geo, m.rho))
    return geo.project(r) if geo.is_torus else r


@dataclass
class FunctionalReport:
    lam: float
    value: float
    log_denominator: float
    gradient: np.ndarray
    density: np.ndarray
    energy: float
    grad_norm: float

    def to_dict(self):
        return {"lambda": self.lam, "value": self.value,
                "log_denominator": self.log_denominator, "grad_norm": self.grad_norm}


def evaluate(geo: DiscreteGeometry, P: CirculationMeasure, lam, u, setting=None, check=True) -> FunctionalReport:
    _setting(geo, setting)
    if lam < 0 or not math.isfinite(lam):
        raise DomainError(f"lambda must be finite and non-negative, got {lam}")
    if check:
        u = geo.check_admissible(u)
    m = moments(geo, P, u)
    ld = log_denominator(geo, P, u, m)
    E = geo.energy(u)
    g = riesz_gradient(geo, P, lam, u, m)
    val = 0.5 * E - lam * ld
    if not math.isfinite(val):
        raise DomainError("functional value is not finite")
    return FunctionalReport(float(lam), float(val), float(ld), g, m.rho, E, math.sqrt(max(geo.energy(g), 0.0)))


def residual_norm(geo, P, lam, u):
    g = riesz_gradient(geo, P, lam, u)
    return math.sqrt(max(geo.energy(g), 0.0))


# second variation ------------------------------------------------------------

def g_second(geo, P, u, phi, psi, m: Moments = None):
    """<G''(u) phi, psi> for the log-denominator G."""
    m = m or moments(geo, P, u)
    w = geo.volume_weights
    rho = m.rho
    return float(np.dot(w * m.q * phi, psi) - np.dot(w * rho, phi) * np.dot(w * rho, psi))


def hessian_action(geo, P, lam, u, phi, psi, check=True):
    """Second variation <phi, psi>_H - lam <G''(u) phi, psi>."""
    if check:
        for name, f in (("u", u), ("phi", phi), ("psi", psi)):
            geo.check_admissible(f, name=name)
    m = moments(geo, P, u)
    gpp = g_second(geo, P, u, phi, psi, m)
    if phi is psi or np.array_equal(phi, psi):
        scale = float(np.dot(geo.volume_weights * m.q, phi * phi))
        if gpp < -1e-12 * max(1.0, scale):
            raise DomainError(f"<G''(u)phi, phi> = {gpp:.3e} < 0; convexity check failed")
    return geo.inner_h(phi, psi) - lam * gpp


def linearized(geo, P, lam, u, m: Moments = None):
    """Riesz form of the second variation: delta -> delta - lam * S(B(u) delta)."""
    m = m or moments(geo, P, u)
    w = geo.volume_weights
    q = m.q
    rho = m.rho
    wrho = w * rho

    def B(d):
        return q * d - rho * np.dot(wrho, d)

    def apply(d):
        out = d - lam * solve_poisson(geo, forcing(geo, B(d)))
        return geo.project(out) if geo.is_torus else out

    return apply, B


@dataclass
class HessianNormReport:
    formula: float
    variational: float
    mu1: float
    second_moment: float
    iterations: int


def hessian_norm_at_zero(geo, P, tol=1e-10, max_iter=2000, seed=0):
    """sup over mean-zero phi of <G''(0) phi, phi> / |grad phi|^2 on the torus.

    The closed form int alpha^2 P / (mu_1 |M|) is compared with a power
    iteration for the generalised problem B phi = sigma K phi.
    """
    if not geo.is_torus:
        raise ConstraintError("the Hessian norm at zero is defined for the torus setting")
    mu1 = first_eigenvalue(geo)
    m2 = moment(P, 2)
    formula = m2 / (mu1 * geo.total_volume)
    zero = np.zeros(geo.n)
    m = moments(geo, P, zero)
    _, B = linearized(geo, P, 1.0, zero, m)
    rng = np.random.default_rng(seed)
    x = geo.project(rng.standard_normal(geo.n))
    sigma_old = -np.inf
    sigma = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        y = geo.project(solve_poisson(geo, forcing(geo, B(x))))
        ny = math.sqrt(geo.energy(y))
        if ny == 0.0:
            sigma = 0.0
            break
        x = y / ny
        sigma = g_second(geo, P, zero, x, x, m) / geo.energy(x)
        if abs(sigma - sigma_old) <= tol * abs(sigma):
            break
        sigma_old = sigma
    return HessianNormReport(formula, float(sigma), mu1, m2, it)
