"""Weighted quantization error with an external field, and Lloyd-type descent.

Voronoi cells are never built: integrals are sums over quadrature samples
assigned to their nearest site, except in ``exact-1d`` mode where the cells
of a one-dimensional configuration are intervals and the integrals of
``|y - x|^p`` have a closed form.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded
from scipy.spatial import cKDTree
from scipy.special import roots_jacobi

from .config import PointConfig, _wrap01
from .expr import Expr, check_positive, evaluate
from .regions import Region

QUAD_MODES = ("monte-carlo", "grid", "exact-1d")
MIN_MC_SAMPLES = 1000
CENTROID_BISECTIONS = 20


class QuantError(ValueError):
    pass


@dataclass(frozen=True)
class Quadrature:
    mode: str = "monte-carlo"
    samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in QUAD_MODES:
            raise QuantError(f"unknown quadrature mode {self.mode!r}")
        if self.mode == "monte-carlo" and self.samples < MIN_MC_SAMPLES:
            raise QuantError(f"monte-carlo quadrature needs at least {MIN_MC_SAMPLES} samples")
        if self.mode == "grid" and self.samples < 1:
            raise QuantError("grid quadrature needs at least one sample")


@dataclass(frozen=True)
class QuantSpec:
    p: float = 2.0
    eta: Expr | None = None  # weight eta(y) > 0; None means 1
    xi: Expr | None = None  # external field xi(x) >= 0; None means 0
    quad: Quadrature = field(default_factory=Quadrature)

    def __post_init__(self):
        if not self.p > 0:
            raise QuantError("p must be positive")

    def validate(self, region: Region) -> None:
        pts = region.sample_uniform(1000, self.quad.seed)
        if self.eta is not None:
            check_positive(self.eta, pts, what="eta")
        if self.xi is not None:
            lo = float(np.min(evaluate(self.xi, pts)))
            if lo < 0:
                raise QuantError(f"external field must be nonnegative (min {lo:.3g})")


@dataclass(frozen=True)
class QuantEnergy:
    """The two parts of E_Q, kept apart for reporting."""

    integral: float
    field: float
    stderr: float = 0.0  # Monte Carlo standard error of the integral (0 otherwise)

    @property
    def total(self) -> float:
        return self.integral + self.field


# -- assignment ---------------------------------------------------------------


def assign_sites(samples, config: PointConfig) -> np.ndarray:
    """Index of the nearest site for every sample; ties go to the smaller index."""
    y = np.asarray(samples, dtype=float)
    if y.ndim == 1:
        y = y[:, None] if config.dim == 1 else y[None, :]
    sites = config.points
    n = config.n
    if config.metric == "circle-periodic":
        tree = cKDTree(_wrap01(sites), boxsize=1.0)
        yq = _wrap01(y)
    else:
        tree = cKDTree(sites)
        yq = y
    out = np.empty(len(y), dtype=np.intp)
    pending = np.arange(len(y))
    m = min(n, 4)
    while len(pending):
        tree_d, cand = tree.query(yq[pending], k=m)
        cand = np.asarray(cand).reshape(len(pending), m)
        tree_d = np.asarray(tree_d).reshape(len(pending), m)
        diff = y[pending][:, None, :] - sites[cand]
        if config.metric == "circle-periodic":
            diff = diff - np.round(diff)
        exact = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        best = exact.min(axis=1, keepdims=True)
        # Smallest index among the exact minimizers.
        tied = np.where(exact == best, cand, n)
        out[pending] = tied.min(axis=1)
        # Further ties could hide beyond the queried set.
        unsure = (m < n) & (tree_d[:, -1] <= best[:, 0] * (1 + 1e-9))
        pending = pending[unsure]
        m = min(n, 4 * m)
    return out


# -- quadrature ---------------------------------------------------------------


def quadrature_points(region: Region, quad: Quadrature) -> tuple[np.ndarray, float]:
    """Samples and their common weight (measure / count)."""
    if quad.mode == "monte-carlo":
        y = region.sample_uniform(quad.samples, quad.seed)
    elif quad.mode == "grid":
        y = region.grid_samples(quad.samples)
    else:
        raise QuantError("exact-1d mode has no sample points")
    return y, region.measure() / len(y)


def _field_term(spec: QuantSpec, pts: np.ndarray, d: int) -> float:
    if spec.xi is None:
        return 0.0
    n = len(pts)
    return n ** (spec.p / d - 1.0) * float(np.sum(evaluate(spec.xi, pts)))


def _eta_values(spec: QuantSpec, y: np.ndarray):
    return 1.0 if spec.eta is None else evaluate(spec.eta, y)


def _eta_constant(spec: QuantSpec) -> float:
    if spec.eta is None:
        return 1.0
    if spec.eta.variables:
        raise QuantError("exact-1d mode needs a constant weight eta")
    return float(evaluate(spec.eta, np.zeros(1)))


# -- exact 1D -------------------------------------------------------------------


def _G(u, p):
    """Antiderivative of |u|^p."""
    return np.sign(u) * np.abs(u) ** (p + 1) / (p + 1)


def cells_1d(config: PointConfig, region: Region) -> list[tuple[int, float, float]]:
    """Nonempty Voronoi cells of a 1D configuration as (site, lo, hi) intervals.

    On the circle the intervals are unrolled around the site (lo may be
    negative and hi may exceed 1). Repeated sites: the smallest index gets the
    whole cell and the others get none. On a union of intervals one site may
    own several pieces.
    """
    if config.dim != 1 or region.dim != 1:
        raise QuantError("exact-1d mode is only available in one dimension")
    x = config.points[:, 0]
    periodic = region.kind == "circle-periodic"
    if periodic:
        x = np.mod(x, 1.0)
    elif region.kind not in ("box", "box-union"):
        raise QuantError(f"exact-1d mode does not support {region.kind!r}")
    # np.unique keeps the first (smallest) index of each repeated value.
    xs, first = np.unique(x, return_index=True)
    n = len(xs)
    cells = []
    if periodic:
        if n == 1:
            return [(int(first[0]), xs[0] - 0.5, xs[0] + 0.5)]
        prev = np.roll(xs, 1)
        prev[0] -= 1.0
        nxt = np.roll(xs, -1)
        nxt[-1] += 1.0
        for r in range(n):
            cells.append((int(first[r]), (prev[r] + xs[r]) / 2, (xs[r] + nxt[r]) / 2))
        return cells
    bounds = np.concatenate([[-np.inf], (xs[1:] + xs[:-1]) / 2, [np.inf]])
    for comp in region.components():
        a = float(comp.corners[0, 0])
        b = a + float(comp.sides[0, 0])
        for r in range(n):
            lo, hi = max(a, bounds[r]), min(b, bounds[r + 1])
            if hi > lo:
                cells.append((int(first[r]), lo, hi))
    return cells


def _exact_1d(config: PointConfig, region: Region, spec: QuantSpec) -> float:
    eta = _eta_constant(spec)
    x = config.points[:, 0]
    total = 0.0
    for i, lo, hi in cells_1d(config, region):
        c = x[i] if region.kind != "circle-periodic" else np.mod(x[i], 1.0)
        total += float(_G(hi - c, spec.p) - _G(lo - c, spec.p))
    return eta * total


# -- energy -----------------------------------------------------------------------


def quant_energy_terms(config: PointConfig, region: Region, spec: QuantSpec) -> QuantEnergy:
    """Integral part, field part and (for Monte Carlo) the standard error."""
    if config.n < 1:
        raise QuantError("empty configuration")
    d = region.intrinsic_dim
    fld = _field_term(spec, config.points, d)
    if spec.quad.mode == "exact-1d":
        return QuantEnergy(_exact_1d(config, region, spec), fld)
    y, w = quadrature_points(region, spec.quad)
    vals = _integrand(config, y, spec)
    integral = w * float(np.sum(vals))
    stderr = 0.0
    if spec.quad.mode == "monte-carlo":
        stderr = region.measure() * float(np.std(vals, ddof=1)) / math.sqrt(len(vals))
    return QuantEnergy(integral, fld, stderr)


def _integrand(config: PointConfig, y: np.ndarray, spec: QuantSpec) -> np.ndarray:
    a = assign_sites(y, config)
    r = np.linalg.norm(_disp(y, config.points[a], config.metric), axis=1)
    return _eta_values(spec, y) * r**spec.p


def _disp(y, x, metric):
    diff = y - x
    if metric == "circle-periodic":
        diff = diff - np.round(diff)
    return diff


def quant_energy(config: PointConfig, region: Region, spec: QuantSpec) -> float:
    """E_Q = int_A eta(y) min_i |y - x_i|^p dy + N^{p/d - 1} sum_i xi(x_i)."""
    return quant_energy_terms(config, region, spec).total


def quant_gradient(config: PointConfig, region: Region, spec: QuantSpec) -> np.ndarray:
    """Gradient of the sampled E_Q in the site positions (cells held fixed)."""
    from .riesz import field_gradient, _fd_step

    pts = config.points
    g = np.zeros_like(pts)
    if spec.quad.mode == "exact-1d":
        eta = _eta_constant(spec)
        for i, lo, hi in cells_1d(config, region):
            c = pts[i, 0] if region.kind != "circle-periodic" else np.mod(pts[i, 0], 1.0)
            g[i, 0] += eta * (abs(lo - c) ** spec.p - abs(hi - c) ** spec.p)
    else:
        y, w = quadrature_points(region, spec.quad)
        a = assign_sites(y, config)
        diff = _disp(pts[a], y, config.metric)
        r = np.linalg.norm(diff, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, spec.p * r ** (spec.p - 2), 0.0)
        contrib = (w * _eta_values(spec, y) * scale)[:, None] * diff
        np.add.at(g, a, contrib)
    if spec.xi is not None:
        d = region.intrinsic_dim
        g += config.n ** (spec.p / d - 1.0) * field_gradient(spec.xi, pts, _fd_step(config))
    return g


class QuantObjective:
    """Optimizer adapter: E_Q and its gradient on a fixed quadrature rule."""

    def __init__(self, spec: QuantSpec, region: Region):
        self.spec = spec
        self.region = region

    def value(self, points) -> float:
        return quant_energy(PointConfig(points, self.region.metric), self.region, self.spec)

    def value_and_grad(self, points):
        cfg = PointConfig(points, self.region.metric)
        return quant_energy(cfg, self.region, self.spec), quant_gradient(cfg, self.region, self.spec)


# -- Lloyd ----------------------------------------------------------------------


def lloyd_step(config: PointConfig, region: Region, spec: QuantSpec, seed: int | None = None) -> PointConfig:
    """Move every site to the weighted p-centroid of its cell, then project into A.

    p = 2 uses the eta-weighted mean; other p use bisection on the directional
    derivative of the cell integral along its gradient. In exact-1d mode with
    constant weight every p-centroid is the interval midpoint. Sites whose
    cell is empty are re-seeded at uniform samples drawn from ``seed``
    (default: the quadrature seed).
    """
    seed = spec.quad.seed if seed is None else seed
    pts = np.array(config.points, dtype=float)
    n = config.n
    filled = np.zeros(n, dtype=bool)
    if spec.quad.mode == "exact-1d":
        _eta_constant(spec)
        pieces: dict[int, list] = {}
        for i, lo, hi in cells_1d(config, region):
            pieces.setdefault(i, []).append((lo, hi))
        for i, iv in pieces.items():
            pts[i, 0] = _interval_p_centroid(iv, spec.p, region.diameter)
            filled[i] = True
        if region.kind == "circle-periodic":
            pts = np.mod(pts, 1.0)
    else:
        y, _ = quadrature_points(region, spec.quad)
        filled = _sampled_move(pts, config, region, spec, y, assign_sites(y, config))
    empty = np.flatnonzero(~filled)
    if len(empty):
        pts[empty] = region.sample_uniform(len(empty), seed)
    return PointConfig(region.project(pts), config.metric)


def _sampled_move(pts, config, region, spec, y, a) -> np.ndarray:
    """Write cell centroids into ``pts`` in place; returns the mask of nonempty cells."""
    n = config.n
    eta = np.broadcast_to(_eta_values(spec, y), (len(y),))
    filled = np.bincount(a, minlength=n) > 0
    if spec.p == 2 and config.metric == "euclidean":
        wsum = np.bincount(a, weights=eta, minlength=n)
        for ax in range(config.dim):
            num = np.bincount(a, weights=eta * y[:, ax], minlength=n)
            pts[filled, ax] = num[filled] / wsum[filled]
    else:
        order = np.argsort(a, kind="stable")
        starts = np.searchsorted(a[order], np.arange(n + 1))
        for i in np.flatnonzero(filled):
            sel = order[starts[i] : starts[i + 1]]
            pts[i] = _p_centroid(pts[i], y[sel], eta[sel], spec.p, config.metric, region.diameter)
    return filled


def _interval_p_centroid(intervals, p, diam):
    """Minimizer of sum over intervals of int |y - c|^p dy."""
    if len(intervals) == 1:
        lo, hi = intervals[0]
        return (lo + hi) / 2
    iv = np.array(intervals)
    if p == 2:
        length = iv[:, 1] - iv[:, 0]
        return float(np.sum(length * iv.mean(axis=1)) / np.sum(length))

    def slope(c):
        return float(np.sum(np.abs(iv[:, 0] - c) ** p - np.abs(iv[:, 1] - c) ** p))

    lo, hi = float(iv.min()), float(iv.max())
    while hi - lo > 1e-10 * diam:
        mid = (lo + hi) / 2
        if slope(mid) < 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def _p_centroid(x, y, w, p, metric, diam):
    def grad(c):
        diff = _disp(np.asarray(c)[None, :], y, metric)
        r = np.linalg.norm(diff, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, p * r ** (p - 2), 0.0)
        return np.sum((w * scale)[:, None] * diff, axis=0)

    g = grad(x)
    gn = float(np.linalg.norm(g))
    if gn == 0:
        return x
    u = -g / gn
    hi = float(np.max(np.linalg.norm(_disp(x[None, :], y, metric), axis=1)))
    if float(grad(x + hi * u) @ u) <= 0:
        return x + hi * u
    lo = 0.0
    for _ in range(CENTROID_BISECTIONS):
        if hi - lo <= 1e-10 * diam:
            break
        mid = (lo + hi) / 2
        if float(grad(x + mid * u) @ u) < 0:
            lo = mid
        else:
            hi = mid
    return x + (lo + hi) / 2 * u


@dataclass
class LloydResult:
    config: PointConfig
    energies: list[float]
    reason: str


def lloyd(
    config: PointConfig, region: Region, spec: QuantSpec, max_steps: int = 200, tol: float = 1e-10, seed: int | None = None
) -> LloydResult:
    """Iterate :func:`lloyd_step` until the relative energy change drops below ``tol``."""
    seed = spec.quad.seed if seed is None else seed
    if spec.quad.mode == "exact-1d":
        energies = [quant_energy(config, region, spec)]
        reason = "max-iters"
        for step in range(max_steps):
            config = lloyd_step(config, region, spec, seed + step + 1)
            energies.append(quant_energy(config, region, spec))
            if abs(energies[-2] - energies[-1]) <= tol * abs(energies[-2]):
                reason = "energy-tol"
                break
        return LloydResult(config, energies, reason)
    # Sampled rules: one quadrature draw, one site assignment per iteration
    # shared by the energy of the current sites and the move to the centroids.
    y, w = quadrature_points(region, spec.quad)
    eta = _eta_values(spec, y)
    d = region.intrinsic_dim

    def assign_and_energy(cfg):
        a = assign_sites(y, cfg)
        r = np.linalg.norm(_disp(y, cfg.points[a], cfg.metric), axis=1)
        return a, w * float(np.sum(eta * r**spec.p)) + _field_term(spec, cfg.points, d)

    a, e = assign_and_energy(config)
    energies = [e]
    reason = "max-iters"
    for step in range(max_steps):
        pts = np.array(config.points, dtype=float)
        empty = np.flatnonzero(~_sampled_move(pts, config, region, spec, y, a))
        if len(empty):
            pts[empty] = region.sample_uniform(len(empty), seed + step + 1)
        config = PointConfig(region.project(pts), config.metric)
        a, e = assign_and_energy(config)
        energies.append(e)
        if abs(energies[-2] - energies[-1]) <= tol * abs(energies[-2]):
            reason = "energy-tol"
            break
    return LloydResult(config, energies, reason)


# -- Newton refinement on an interval ----------------------------------------------------

JACOBI_NODES = 12


@lru_cache(maxsize=None)
def _jacobi(q: float):
    return roots_jacobi(JACOBI_NODES, 0.0, q)


def _half_cells(spec: QuantSpec, x: np.ndarray, length: np.ndarray, side: float, q: float) -> np.ndarray:
    """int_0^L eta(x + side u) u^q du per site; Gauss-Jacobi absorbs u^q."""
    t, w = _jacobi(float(q))
    half = length / 2
    y = x[:, None] + side * half[:, None] * (1.0 + t)[None, :]
    eta = np.broadcast_to(np.asarray(_eta_values(spec, y.reshape(-1, 1)), dtype=float), (y.size,))
    return half ** (q + 1) * (eta.reshape(y.shape) @ w)


def _interval_terms(x: np.ndarray, spec: QuantSpec, a: float, b: float, hessian: bool = True):
    """Exact E_Q of sorted sites on [a, b], with gradient and tridiagonal Hessian."""
    n, p = len(x), spec.p
    mid = (x[1:] + x[:-1]) / 2
    left = x - np.concatenate([[a], mid])
    right = np.concatenate([mid, [b]]) - x
    energy = float(np.sum(_half_cells(spec, x, left, -1.0, p) + _half_cells(spec, x, right, 1.0, p)))
    fld = 0.0
    if spec.xi is not None:
        fld = n ** (p - 1.0) * float(np.sum(evaluate(spec.xi, x[:, None])))
    if not hessian:
        return energy + fld, None, None, None
    grad = p * (_half_cells(spec, x, left, -1.0, p - 1) - _half_cells(spec, x, right, 1.0, p - 1))
    if p > 1:
        diag = p * (p - 1) * (_half_cells(spec, x, left, -1.0, p - 2) + _half_cells(spec, x, right, 1.0, p - 2))
    else:
        diag = 2.0 * np.broadcast_to(np.asarray(_eta_values(spec, x[:, None]), dtype=float), (n,))
    # Moving a site drags the shared cell boundaries at half speed.
    eta_mid = np.broadcast_to(np.asarray(_eta_values(spec, mid[:, None]), dtype=float), (n - 1,))
    off = -0.5 * p * eta_mid * right[:-1] ** (p - 1)
    diag = diag.copy()
    diag[:-1] += off
    diag[1:] += off
    if spec.xi is not None:
        h = 1e-4 * (b - a)
        f0, fp, fm = (evaluate(spec.xi, (x + dx)[:, None]) for dx in (0.0, h, -h))
        grad = grad + n ** (p - 1.0) * (fp - fm) / (2 * h)
        diag = diag + n ** (p - 1.0) * (fp - 2 * f0 + fm) / h**2
    return energy + fld, grad, diag, off


def _newton_direction(grad, diag, off):
    ab = np.zeros((3, len(grad)))
    ab[0, 1:] = off
    ab[1] = diag
    ab[2, :-1] = off
    try:
        step = solve_banded((1, 1), ab, -grad)
    except (np.linalg.LinAlgError, ValueError):
        step = None
    if step is None or not np.all(np.isfinite(step)) or float(grad @ step) >= 0:
        # Indefinite or singular Hessian: diagonally scaled descent.
        step = -grad / np.maximum(np.abs(diag), np.max(np.abs(diag)) * 1e-12 + 1e-300)
    return step


def newton_1d(
    config: PointConfig, region: Region, spec: QuantSpec, max_iters: int = 100, tol: float = 1e-13
) -> LloydResult:
    """Minimize E_Q on an interval by Newton's method with exact cell integrals.

    Lloyd's method contracts the slowest (global) mode of an N-point 1D
    quantizer only by a factor 1 - O(N^-2) per step, so it stalls long before
    a nonuniform optimum is reached. Here the cell integrals of
    eta(y)|y - x|^p are evaluated by Gauss-Jacobi quadrature (exact for
    polynomial eta), the Hessian is tridiagonal, and a backtracking line
    search keeps the sites ordered inside the interval. ``energies`` holds
    these exact energies; stops on a step below ``tol`` times the length.
    """
    if region.kind != "box" or region.dim != 1:
        raise QuantError("newton_1d works on a single interval")
    if spec.p < 1:
        raise QuantError("newton_1d needs p >= 1")
    a = float(region.corners[0, 0])
    b = a + float(region.sides[0, 0])
    order = np.argsort(config.points[:, 0], kind="stable")
    x = np.clip(config.points[order, 0], a, b)
    e, g, diag, off = _interval_terms(x, spec, a, b)
    energies = [e]
    reason = "max-iters"
    for _ in range(max_iters):
        step = _newton_direction(g, diag, off)
        t, accepted = 1.0, False
        while t > 1e-12:
            trial = np.clip(x + t * step, a, b)
            if np.all(np.diff(trial) >= 0):
                e_new = _interval_terms(trial, spec, a, b, hessian=False)[0]
                if e_new <= e + 1e-4 * float(g @ (trial - x)):
                    accepted = True
                    break
            t /= 2
        if not accepted:
            reason = "energy-tol"
            break
        moved = float(np.max(np.abs(trial - x)))
        x = trial
        e, g, diag, off = _interval_terms(x, spec, a, b)
        energies.append(e)
        if moved <= tol * (b - a):
            reason = "step-tol"
            break
    out = np.empty_like(x)
    out[order] = x
    return LloydResult(PointConfig(out[:, None], config.metric), energies, reason)


# -- one-dimensional references --------------------------------------------------------


def midpoint_config(n: int, a: float = 0.0, b: float = 1.0) -> PointConfig:
    """Cell midpoints a + (i + 1/2)(b - a)/n, the optimal quantizer on [a, b]."""
    return PointConfig(a + (np.arange(n) + 0.5) * (b - a) / n)


def quantizer_constant_1d(p: float) -> float:
    """Limit of N^p E_Q on a unit interval with eta = 1: 1 / (2^p (p + 1))."""
    return 1.0 / (2.0**p * (p + 1.0))


def grid_search_1d(n: int, p: float = 2.0, resolution: int = 200) -> tuple[np.ndarray, float]:
    """Brute-force minimum of the exact 1D error over sorted sites on a uniform grid of [0, 1]."""
    if n < 1 or n > 3:
        raise QuantError("grid search is meant for 1 <= n <= 3")
    grid = np.arange(resolution + 1) / resolution
    combos = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations_with_replacement(range(resolution + 1), n)), dtype=np.intp
    ).reshape(-1, n)
    x = grid[combos]
    # Sorted sites: cells end at midpoints (empty for repeated sites).
    mids = (x[:, 1:] + x[:, :-1]) / 2
    lo = np.concatenate([np.zeros((len(x), 1)), mids], axis=1)
    hi = np.concatenate([mids, np.ones((len(x), 1))], axis=1)
    energy = np.sum(_G(hi - x, p) - _G(lo - x, p), axis=1)
    best = int(np.argmin(energy))
    return x[best], float(energy[best])
