"""Circulation measures on [-1, 1] and stable exponential-moment evaluators.

A measure is stored as a finite list of atoms plus quadrature nodes for any
non-atomic part.  Every integral against the measure is therefore a weighted
sum, evaluated in shifted-log form so that ``alpha * t`` far beyond the
double-precision exponent range is harmless.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, InvalidMeasureError

NORMALIZATION_TOL = 1e-12

# Named densities on an interval [a, b]; values need not be normalised.
DENSITIES = {
    "uniform": lambda a: np.ones_like(a),
    "linear": lambda a: 2.0 * a,
    "quadratic": lambda a: 3.0 * a * a,
}
DEFAULT_INTERVALS = {"uniform": (0.0, 1.0), "linear": (0.0, 1.0), "quadratic": (0.0, 1.0)}


@dataclass(frozen=True)
class CirculationMeasure:
    """Probability measure on [-1, 1] given by atoms and quadrature nodes.

    Parameters
    ----------
    atoms : sequence of (alpha, weight)
        Point masses; weights strictly positive, alphas pairwise distinct.
    continuous_nodes : sequence of (alpha, weight)
        Quadrature discretisation of the non-atomic part; weights >= 0.
    """

    atoms: tuple = ()
    continuous_nodes: tuple = ()
    alphas: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        atoms = tuple((float(a), float(w)) for a, w in self.atoms)
        nodes = tuple((float(a), float(w)) for a, w in self.continuous_nodes)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "continuous_nodes", nodes)
        for a, w in atoms + nodes:
            if not (math.isfinite(a) and math.isfinite(w)):
                raise InvalidMeasureError("non-finite alpha or weight")
            if a < -1.0 or a > 1.0:
                raise InvalidMeasureError(f"alpha={a} outside [-1, 1]")
        if any(w <= 0 for _, w in atoms):
            raise InvalidMeasureError("atom weights must be positive")
        if any(w < 0 for _, w in nodes):
            raise InvalidMeasureError("quadrature weights must be non-negative")
        atom_alphas = [a for a, _ in atoms]
        if len(set(atom_alphas)) != len(atom_alphas):
            raise InvalidMeasureError("atoms must have pairwise distinct alpha")
        pairs = [p for p in atoms + nodes if p[1] > 0]
        object.__setattr__(self, "alphas", np.array([a for a, _ in pairs], dtype=float))
        object.__setattr__(self, "weights", np.array([w for _, w in pairs], dtype=float))

    # constructors -----------------------------------------------------
    @classmethod
    def dirac(cls, alpha=1.0):
        return cls(atoms=((alpha, 1.0),))

    @classmethod
    def from_atoms(cls, pairs):
        return cls(atoms=tuple(pairs))

    @property
    def total_weight(self):
        return float(self.weights.sum())

    @property
    def is_normalized(self):
        return abs(self.total_weight - 1.0) <= NORMALIZATION_TOL

    @property
    def log_weights(self):
        return np.log(self.weights)

    def support(self):
        """Alphas carrying positive weight (atoms first, then nodes)."""
        return self.alphas.copy()

    def mass_in(self, lo, hi):
        """P([lo, hi])."""
        sel = (self.alphas >= lo) & (self.alphas <= hi)
        return float(self.weights[sel].sum())

    def to_dict(self):
        return {
            "atoms": [{"alpha": a, "weight": w} for a, w in self.atoms],
            "continuous_nodes": [{"alpha": a, "weight": w} for a, w in self.continuous_nodes],
        }


@dataclass(frozen=True)
class AssumptionProfile:
    supp_touches_pm1: bool
    calH: bool
    mass_at_one: float


def quadrature_nodes(density, n, rule="midpoint", interval=None, mass=1.0):
    """Quadrature nodes for a named density, scaled to total weight ``mass``."""
    if density not in DENSITIES:
        raise InvalidMeasureError(f"unknown density family {density!r}; known: {sorted(DENSITIES)}")
    if n < 1:
        raise InvalidMeasureError("need at least one quadrature node")
    a, b = interval if interval is not None else DEFAULT_INTERVALS[density]
    if not (-1.0 <= a < b <= 1.0):
        raise InvalidMeasureError(f"density interval [{a}, {b}] must lie in [-1, 1]")
    if rule == "midpoint":
        x = a + (b - a) * (np.arange(n) + 0.5) / n
        q = np.full(n, (b - a) / n)
    elif rule == "gauss":
        t, q = np.polynomial.legendre.leggauss(n)
        x = 0.5 * (b - a) * t + 0.5 * (a + b)
        q = 0.5 * (b - a) * q
    else:
        raise InvalidMeasureError(f"unknown quadrature rule {rule!r}")
    w = q * DENSITIES[density](x)
    if np.any(w < 0):
        raise InvalidMeasureError(f"density {density!r} is negative on [{a}, {b}]")
    total = w.sum()
    if total <= 0:
        raise InvalidMeasureError("density has zero total weight")
    return tuple(zip(x.tolist(), (mass * w / total).tolist()))


def normalize(raw: CirculationMeasure) -> CirculationMeasure:
    total = sum(w for _, w in raw.atoms) + sum(w for _, w in raw.continuous_nodes)
    if not total > 0:
        raise InvalidMeasureError(f"total weight {total} is not positive")
    return CirculationMeasure(
        atoms=tuple((a, w / total) for a, w in raw.atoms),
        continuous_nodes=tuple((a, w / total) for a, w in raw.continuous_nodes),
    )


def require_probability(P: CirculationMeasure):
    if not P.is_normalized:
        raise InvalidMeasureError(f"measure has total weight {P.total_weight}, expected 1")


def check_assumptions(P: CirculationMeasure, tol_support=1e-12) -> AssumptionProfile:
    """Standing assumptions: support touching {-1, 1}, and the same-sign condition.

    The same-sign condition needs an explicit atom at 1; a quadrature node
    that happens to sit at 1 does not count.
    """
    alphas = P.alphas
    touches = bool(np.any(np.abs(alphas) >= 1.0 - tol_support)) if alphas.size else False
    mass_at_one = sum(w for a, w in P.atoms if abs(a - 1.0) <= tol_support)
    nonneg = bool(np.all(alphas >= 0.0))
    calH = nonneg and mass_at_one > 0.0
    return AssumptionProfile(supp_touches_pm1=touches, calH=calH, mass_at_one=float(mass_at_one))


def moment(P: CirculationMeasure, k: int) -> float:
    if k < 0 or int(k) != k:
        raise DomainError("moment order must be a non-negative integer")
    return float(np.sum(P.weights * P.alphas ** int(k)))


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise DomainError("t must be finite")
    return t


def exp_moment(P: CirculationMeasure, t):
    """log of the integral of exp(alpha t) against P (scalar or array t)."""
    t = _check_t(t)
    terms = np.multiply.outer(t, P.alphas) + P.log_weights
    out = logsumexp(terms, axis=-1)
    return float(out) if out.ndim == 0 else out


def weighted_exp_moment(P: CirculationMeasure, t):
    """log|I| and sign of I = integral of alpha exp(alpha t) against P.

    Positive and negative alphas are summed separately in log space and then
    combined, so the magnitude is accurate even when the two parts nearly
    cancel.  Returns ``(-inf, 0)`` when the integral is exactly zero.
    """
    t = _check_t(t)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    logv = np.full(t.shape, -np.inf)
    sign = np.zeros(t.shape, dtype=int)
    pos = P.alphas > 0
    neg = P.alphas < 0
    lp = np.full(t.shape, -np.inf)
    ln = np.full(t.shape, -np.inf)
    # alpha * weight may underflow to 0 for subnormal alphas; log(0) = -inf is the right answer
    with np.errstate(divide="ignore"):
        if pos.any():
            lp = logsumexp(np.multiply.outer(t, P.alphas[pos]) + np.log(P.alphas[pos] * P.weights[pos]), axis=-1)
        if neg.any():
            ln = logsumexp(np.multiply.outer(t, P.alphas[neg]) + np.log(-P.alphas[neg] * P.weights[neg]), axis=-1)
    gt = lp > ln
    lt = ln > lp
    with np.errstate(divide="ignore"):
        logv[gt] = lp[gt] + np.log1p(-np.exp(ln[gt] - lp[gt]))
        logv[lt] = ln[lt] + np.log1p(-np.exp(lp[lt] - ln[lt]))
    sign[gt] = 1
    sign[lt] = -1
    if scalar:
        return float(logv[0]), int(sign[0])
    return logv, sign


def claim_a_gap(P: CirculationMeasure):
    """Distance between 1 and the largest support point below 1 (inf if none)."""
    below = P.alphas[P.alphas < 1.0]
    return float(1.0 - below.max()) if below.size else math.inf


def parse_measure_spec(spec) -> CirculationMeasure:
    """Build a normalised measure from a config mapping.

    Accepted keys: ``atoms`` (list of ``{alpha, weight}``) and ``density``
    (``{name, nodes, rule, interval, mass}``); ``density`` may also be a list.
    """
    if not isinstance(spec, dict):
        raise InvalidMeasureError("measure spec must be a mapping")
    atoms = []
    for i, item in enumerate(spec.get("atoms", []) or []):
        try:
            atoms.append((float(item["alpha"]), float(item["weight"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidMeasureError(f"atoms[{i}] needs numeric 'alpha' and 'weight'") from exc
    dens = spec.get("density")
    dens_list = [] if dens is None else (dens if isinstance(dens, list) else [dens])
    nodes = []
    for d in dens_list:
        name = d.get("name", d.get("family"))
        nodes.extend(
            quadrature_nodes(
                name,
                int(d.get("nodes", 100)),
                d.get("rule", "midpoint"),
                tuple(d["interval"]) if "interval" in d else None,
                float(d.get("mass", 1.0)),
            )
        )
    total = sum(w for _, w in atoms) + sum(w for _, w in nodes)
    if not total > 0:
        raise InvalidMeasureError(f"measure weights sum to {total}; need a positive total")
    return normalize(CirculationMeasure(atoms=tuple(atoms), continuous_nodes=tuple(nodes)))
