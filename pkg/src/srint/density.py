"""Limiting densities of optimal configurations and the associated limit functional.

For a rate exponent sigma, leading constant F(1), weight eta and field xi::

    phi = ((L1 - xi) / (F(1) (1 + sigma) eta))_+ ^ (1 / sigma)

with L1 fixed by int_A phi = 1. The Riesz family has sigma = s/d > 0 and
exponent d/s. The quantizer family has sigma = -1 - p/d, so 1 + sigma < 0 and
the same formula reads phi = (F(1) (p/d) eta / (xi - L1))^(d/(p+d)) with
L1 < min xi; both are evaluated with their own explicit exponent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .config import PointConfig
from .expr import Expr, evaluate
from .regions import Region

SIMPSON_INTERVALS = 2048
NORMALIZATION_TOL = 1e-8
FAMILIES = ("riesz", "quantizer")


class DensityError(ValueError):
    pass


# -- quadrature ------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray  # (n, dim)
    weights: np.ndarray  # (n,), summing to the measure of the region


def quadrature_rule(region: Region, samples: int = 200_000, seed: int = 0) -> QuadratureRule:
    """Composite Simpson (2048 intervals per piece) in 1D, Monte Carlo otherwise."""
    if region.dim == 1 and region.kind in ("box", "box-union", "circle-periodic"):
        nodes, weights = [], []
        for comp in region.components():
            a = float(comp.corners[0, 0])
            b = a + float(comp.sides[0, 0])
            x, w = _simpson(a, b, SIMPSON_INTERVALS)
            nodes.append(x)
            weights.append(w)
        return QuadratureRule(np.concatenate(nodes)[:, None], np.concatenate(weights))
    if samples < 1:
        raise DensityError("quadrature needs samples")
    y = region.sample_uniform(samples, seed)
    return QuadratureRule(y, np.full(len(y), region.measure() / len(y)))


def _simpson(a: float, b: float, m: int):
    x = np.linspace(a, b, m + 1)
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return x, w * (b - a) / (3 * m)


# -- model --------------------------------------------------------------------------


def _eval_weight(expr: Expr | None, x: np.ndarray) -> np.ndarray:
    """eta(x); two-point weights kappa(x, y) are read on the diagonal kappa(x, x)."""
    if expr is None:
        return np.ones(len(x))
    return evaluate(expr, x, x if expr.uses_y else None)


def _eval_field(expr: Expr | None, x: np.ndarray) -> np.ndarray:
    return np.zeros(len(x)) if expr is None else evaluate(expr, x)


@dataclass(frozen=True)
class DensityModel:
    family: str
    region: Region
    sigma: float
    f1: float | None = None
    eta: Expr | None = None
    xi: Expr | None = None
    l1: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DensityError(f"unknown family {self.family!r}")
        if self.family == "riesz" and not self.sigma > 0:
            raise DensityError("the riesz family needs sigma = s/d > 0")
        if self.family == "quantizer" and not self.sigma < -1:
            raise DensityError("the quantizer family needs sigma = -1 - p/d < -1")
        if self.f1 is not None and not self.f1 > 0:
            raise DensityError("F(1) must be positive")

    @classmethod
    def riesz(cls, s: float, region: Region, kappa=None, xi=None, f1=None) -> "DensityModel":
        return cls("riesz", region, s / region.intrinsic_dim, f1, kappa, xi)

    @classmethod
    def quantizer(cls, p: float, region: Region, eta=None, xi=None, f1=None) -> "DensityModel":
        return cls("quantizer", region, -1.0 - p / region.intrinsic_dim, f1, eta, xi)

    @property
    def exponent(self) -> float:
        """Power applied to the positive base: d/s (riesz) or d/(p+d) (quantizer)."""
        return 1.0 / self.sigma if self.family == "riesz" else -1.0 / self.sigma

    @property
    def effective_f1(self) -> float:
        if self.f1 is not None:
            return self.f1
        if self.xi is None:
            return 1.0  # cancels in the normalization when xi = 0
        raise DensityError("F(1) is required when an external field is present")

    @property
    def solved(self) -> bool:
        return self.l1 is not None


def _phi_values(model: DensityModel, x: np.ndarray, l1: float) -> np.ndarray:
    eta = _eval_weight(model.eta, x)
    xi = _eval_field(model.xi, x)
    c = model.effective_f1 * abs(1.0 + model.sigma) * eta
    if model.family == "riesz":
        base = (l1 - xi) / c
    else:
        gap = xi - l1
        with np.errstate(divide="ignore"):
            base = np.where(gap > 0, c / np.where(gap > 0, gap, 1.0), 0.0)
    return np.where(base > 0, np.maximum(base, 0.0) ** model.exponent, 0.0)


def phi(x, model: DensityModel):
    """Density at a point (float) or at a batch of points (array)."""
    if not model.solved:
        raise DensityError("solve_l1 has not been run on this model")
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1 and (arr.ndim == 0 or len(arr) == model.region.dim) and model.region.dim >= 1
    pts = arr.reshape(1, -1) if single else (arr[:, None] if arr.ndim == 1 else arr)
    out = _phi_values(model, pts, model.l1)
    return float(out[0]) if single else out


def solve_l1(model: DensityModel, quad_samples: int = 200_000, seed: int = 0, rule: QuadratureRule | None = None) -> DensityModel:
    """Return the model with L1 chosen so that phi integrates to one."""
    region = model.region
    rule = quadrature_rule(region, quad_samples, seed) if rule is None else rule
    y, w = rule.nodes, rule.weights
    eta = _eval_weight(model.eta, y)
    if not np.min(eta) > 0:
        raise DensityError("the weight must be positive on the region")
    xi = _eval_field(model.xi, y)
    meas = float(np.sum(w))
    f1 = model.effective_f1

    def mass(l1):
        return float(np.sum(w * _phi_values(model, y, l1)))

    xi_min = float(np.min(xi))
    scale = f1 * abs(1.0 + model.sigma) * float(np.max(eta))
    if model.family == "riesz":
        lo = xi_min
        step = scale * meas ** (-model.sigma)
        for j in range(200):
            hi = xi_min + step * 2.0**j
            if mass(hi) >= 1.0:
                break
        else:
            raise DensityError("could not bracket L1: the model is infeasible")
        l1 = _bisect(mass, lo, hi)
    else:
        # Work with the gap g = min xi - L1 > 0; mass decreases in g.
        g_hi = scale * meas ** (-1.0 - model.sigma)
        for j in range(200):
            if mass(xi_min - g_hi) <= 1.0:
                break
            g_hi *= 2.0
        g_lo = g_hi
        for _ in range(2000):
            g_lo /= 2.0
            if mass(xi_min - g_lo) >= 1.0:
                break
            if g_lo < 1e-300:
                raise DensityError("could not bracket L1: total mass stays below one (singular limit)")
        gl = _bisect(lambda lg: -mass(xi_min - math.exp(lg)), math.log(g_lo), math.log(g_hi), target=-1.0)
        l1 = xi_min - math.exp(gl)
    return replace(model, l1=l1, f1=model.f1)


def _bisect(fn: Callable[[float], float], lo: float, hi: float, target: float = 1.0) -> float:
    """Root of fn = target on [lo, hi] for increasing fn."""
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        val = fn(mid)
        if abs(val - target) <= NORMALIZATION_TOL * 1e-2:
            return mid
        if val < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def integrate(fn: Callable[[np.ndarray], np.ndarray], rule: QuadratureRule) -> float:
    return float(np.sum(rule.weights * fn(rule.nodes)))


# -- limit functional -----------------------------------------------------------------


@dataclass(frozen=True)
class GammaFunctional:
    c_e: float
    sigma: float
    region: Region
    eta: Expr | None = None
    xi: Expr | None = None
    normalization_tol: float = 1e-6

    @classmethod
    def for_model(cls, model: DensityModel) -> "GammaFunctional":
        return cls(model.effective_f1, model.sigma, model.region, model.eta, model.xi)


def gamma_functional(density: Callable, gf: GammaFunctional, quad_samples: int = 200_000, seed: int = 0, rule=None) -> float:
    """F(1) int eta phi^(1+sigma) + int xi phi; +inf when phi is not a probability density."""
    rule = quadrature_rule(gf.region, quad_samples, seed) if rule is None else rule
    y, w = rule.nodes, rule.weights
    vals = np.asarray(density(y), dtype=float)
    if np.any(vals < 0) or abs(float(np.sum(w * vals)) - 1.0) > gf.normalization_tol:
        return math.inf
    eta = _eval_weight(gf.eta, y)
    xi = _eval_field(gf.xi, y)
    with np.errstate(divide="ignore"):
        core = np.where(vals > 0, vals ** (1.0 + gf.sigma), 0.0 if gf.sigma > -1 else math.inf)
    return gf.c_e * float(np.sum(w * eta * core)) + float(np.sum(w * xi * vals))


def power_mean_value(gf: GammaFunctional, quad_samples: int = 200_000, seed: int = 0, rule=None) -> float:
    """F(1) (int eta^(-1/sigma))^(-sigma): the minimum of the functional when xi = 0."""
    rule = quadrature_rule(gf.region, quad_samples, seed) if rule is None else rule
    eta = _eval_weight(gf.eta, rule.nodes)
    return gf.c_e * float(np.sum(rule.weights * eta ** (-1.0 / gf.sigma))) ** (-gf.sigma)


# -- comparison -------------------------------------------------------------------------


@dataclass
class DensityReport:
    l1: float
    f1: float | None
    sigma: float
    kind: str  # "ks" (d = 1) or "tv" (d >= 2)
    divergence: float
    bins: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "l1": self.l1,
            "f1": self.f1,
            "sigma": self.sigma,
            "divergence": {self.kind: self.divergence},
            "bins": self.bins,
        }


def model_cdf_1d(model: DensityModel, points: np.ndarray, resolution: int = 1 << 14) -> np.ndarray:
    """CDF of phi along the line (components of a union in order), at ``points``."""
    region = model.region
    xs, cdf_parts, total = [], [], 0.0
    comps = sorted(region.components(), key=lambda c: float(c.corners[0, 0]))
    for comp in comps:
        a = float(comp.corners[0, 0])
        b = a + float(comp.sides[0, 0])
        x = np.linspace(a, b, resolution + 1)
        f = _phi_values(model, x[:, None], model.l1)
        cum = np.concatenate([[0.0], np.cumsum((f[1:] + f[:-1]) * np.diff(x) / 2)])
        xs.append(x)
        cdf_parts.append(total + cum)
        total += cum[-1]
    x_all = np.concatenate(xs)
    c_all = np.concatenate(cdf_parts) / total
    return np.interp(points, x_all, c_all)


def compare_density(config: PointConfig, model: DensityModel, quad_samples: int = 200_000, seed: int = 0) -> DensityReport:
    """KS distance (d = 1) or binned total variation (d >= 2) to the model density."""
    if not model.solved:
        raise DensityError("solve_l1 has not been run on this model")
    region = model.region
    n = config.n
    pts = config.points
    d = region.intrinsic_dim
    nb = max(1, math.ceil(n ** (1.0 / d) / 2))
    if region.dim == 1:
        x = np.sort(np.mod(pts[:, 0], 1.0) if region.kind == "circle-periodic" else pts[:, 0])
        cdf = model_cdf_1d(model, x)
        i = np.arange(1, n + 1)
        ks = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
        lo, hi = region.bounding_box
        edges = np.linspace(lo[0], hi[0], nb + 1)
        counts = np.histogram(x, bins=edges)[0]
        expected = np.diff(model_cdf_1d(model, edges))
        bins = _bin_rows(edges[:-1, None], counts, expected)
        return DensityReport(model.l1, model.f1, model.sigma, "ks", ks, bins)
    lo, hi = region.bounding_box
    rule = quadrature_rule(region, quad_samples, seed)
    prob = rule.weights * _phi_values(model, rule.nodes, model.l1)
    prob = prob / prob.sum()
    cell_q = _bin_index(rule.nodes, lo, hi, nb)
    cell_x = _bin_index(pts, lo, hi, nb)
    total = nb ** region.dim
    expected = np.bincount(cell_q, weights=prob, minlength=total)
    counts = np.bincount(cell_x, minlength=total)
    tv = 0.5 * float(np.sum(np.abs(counts / n - expected)))
    corners = np.stack(np.unravel_index(np.arange(total), (nb,) * region.dim), axis=1) * (hi - lo) / nb + lo
    bins = _bin_rows(corners, counts, expected)
    return DensityReport(model.l1, model.f1, model.sigma, "tv", tv, bins)


def _bin_index(x, lo, hi, nb):
    idx = np.floor((x - lo) / (hi - lo) * nb).astype(int)
    idx = np.clip(idx, 0, nb - 1)
    return np.ravel_multi_index(tuple(idx.T), (nb,) * x.shape[1])


def _bin_rows(corners, counts, expected):
    n = int(np.sum(counts))
    return [
        {"corner": [float(v) for v in c], "count": int(k), "expected": float(e * n)}
        for c, k, e in zip(corners, counts, expected)
    ]
