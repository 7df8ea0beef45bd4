"""k-nearest-neighbour truncated Riesz energies and their exact one-dimensional values."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import NeighborIndex, PointConfig, build_index, displacement, pairwise_distances
from .expr import Expr, check_positive, evaluate
from .regions import Region

# Energy of configurations with coincident interacting points.
INFINITE_ENERGY = math.inf


class RieszError(ValueError):
    pass


@dataclass(frozen=True)
class RieszSpec:
    s: float
    k: int = 1
    kappa: Expr | None = None  # symmetric weight kappa(x, y); None means 1
    xi: Expr | None = None  # external field xi(x) >= 0; None means 0
    d: int = 1  # intrinsic dimension, sets the N^{s/d} field scaling

    def __post_init__(self):
        if not self.s > 0:
            raise RieszError("s must be positive")
        if self.k < 1:
            raise RieszError("k must be at least 1")

    @property
    def sigma(self) -> float:
        return self.s / self.d

    def validate(self, region: Region, samples: int = 1000, seed: int = 0) -> None:
        """Sample-check kappa > 0 on the diagonal and xi >= 0."""
        pts = region.sample_uniform(samples, seed)
        if self.kappa is not None:
            check_positive(self.kappa, pts, two_point=True, what="kappa")
        if self.xi is not None:
            lo = float(np.min(evaluate(self.xi, pts)))
            if lo < 0:
                raise RieszError(f"external field must be nonnegative (min {lo:.3g})")


def _edges(index: NeighborIndex, k: int) -> tuple[np.ndarray, np.ndarray]:
    nbr = index.all_knn(k)
    rows = np.repeat(np.arange(index.config.n), k)
    return rows, nbr.ravel()


def _kappa(spec: RieszSpec, pts: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray | float:
    if spec.kappa is None:
        return 1.0
    return evaluate(spec.kappa, pts[i], pts[j])


def _field_term(spec: RieszSpec, pts: np.ndarray) -> float:
    if spec.xi is None:
        return 0.0
    n = len(pts)
    return n ** (spec.s / spec.d) * float(np.sum(evaluate(spec.xi, pts)))


def energy_knn(config: PointConfig, spec: RieszSpec, index: NeighborIndex | None = None) -> float:
    """Truncated energy: sum over each point's k nearest neighbours plus the scaled field.

    Returns :data:`INFINITE_ENERGY` when some point coincides with one of its
    k nearest neighbours.
    """
    if config.n <= spec.k:
        raise RieszError(f"need more than k={spec.k} points, got {config.n}")
    index = build_index(config) if index is None else index
    i, j = _edges(index, spec.k)
    pts = config.points
    r = np.linalg.norm(displacement(pts, config.metric, i, j), axis=1)
    if np.any(r == 0):
        return INFINITE_ENERGY
    pair = float(np.sum(_kappa(spec, pts, i, j) * r ** (-spec.s)))
    return pair + _field_term(spec, pts)


def _fd_step(config: PointConfig) -> float:
    if config.metric == "circle-periodic":
        return 1e-6
    ext = np.ptp(config.points, axis=0)
    diam = float(np.linalg.norm(ext))
    return 1e-6 * (diam if diam > 0 else 1.0)


def _kappa_partials(spec: RieszSpec, pts, i, j, h) -> tuple[np.ndarray, np.ndarray]:
    xi_, xj_ = pts[i], pts[j]
    d = pts.shape[1]
    g1 = np.zeros_like(xi_)
    g2 = np.zeros_like(xj_)
    for a in range(d):
        e = np.zeros(d)
        e[a] = h
        g1[:, a] = (evaluate(spec.kappa, xi_ + e, xj_) - evaluate(spec.kappa, xi_ - e, xj_)) / (2 * h)
        g2[:, a] = (evaluate(spec.kappa, xi_, xj_ + e) - evaluate(spec.kappa, xi_, xj_ - e)) / (2 * h)
    return g1, g2


def field_gradient(xi: Expr, pts: np.ndarray, h: float) -> np.ndarray:
    """Central differences of xi at every point, shape (N, d)."""
    g = np.zeros_like(pts)
    for a in range(pts.shape[1]):
        e = np.zeros(pts.shape[1])
        e[a] = h
        g[:, a] = (evaluate(xi, pts + e) - evaluate(xi, pts - e)) / (2 * h)
    return g


TIE_RTOL = 1e-12


def _tied_edges(index: NeighborIndex, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Neighbour edges with weights that split the k-th rank among exact ties.

    Candidates whose distance equals the k-th neighbour distance (relative
    1e-12) share the tied slots of the top k equally, so the gradient is the
    average of the one-sided gradients at a tie. Without ties every weight is 1.
    """
    n = index.config.n
    m = min(n - 1, 2 * k + 4)
    while True:
        nbr = index.all_knn(m)
        rows = np.repeat(np.arange(n), m)
        pts = index.config.points
        dist = np.linalg.norm(displacement(pts, index.config.metric, rows, nbr.ravel()), axis=1).reshape(n, m)
        kth = dist[:, k - 1 : k]
        tied = np.abs(dist - kth) <= TIE_RTOL * kth
        if m == n - 1 or not np.any(tied[:, -1]):
            break
        m = min(n - 1, 2 * m)
    rank = np.arange(m)[None, :]
    inside = rank < k
    slots = np.sum(tied & inside, axis=1, keepdims=True)
    share = slots / np.maximum(np.sum(tied, axis=1, keepdims=True), 1)
    w = np.where(tied, share, inside.astype(float))
    keep = w.ravel() > 0
    return rows[keep], nbr.ravel()[keep], w.ravel()[keep]


def gradient_knn(config: PointConfig, spec: RieszSpec, index: NeighborIndex | None = None) -> np.ndarray:
    """Gradient of :func:`energy_knn` with the neighbour graph held fixed.

    Each point collects terms from its own neighbours and from every point
    that counts it as a neighbour. At exact distance ties for the k-th rank
    the tied neighbours share that rank (see :func:`_tied_edges`).
    Derivatives of kappa and xi are taken by central differences.
    """
    index = build_index(config) if index is None else index
    i, j, w = _tied_edges(index, spec.k)
    pts = config.points
    diff = displacement(pts, config.metric, i, j)
    r2 = np.einsum("ij,ij->i", diff, diff)
    if np.any(r2 == 0):
        raise RieszError("gradient undefined: coincident neighbouring points")
    s = spec.s
    kap = w * _kappa(spec, pts, i, j)
    # d/dx_i of kappa * r^{-s} through r: -s kappa r^{-s-2} (x_i - x_j)
    radial = (-s * kap * r2 ** (-s / 2 - 1))[:, None] * diff
    grad = np.zeros_like(pts)
    np.add.at(grad, i, radial)
    np.add.at(grad, j, -radial)
    h = _fd_step(config)
    if spec.kappa is not None:
        g1, g2 = _kappa_partials(spec, pts, i, j, h)
        rs = (w * r2 ** (-s / 2))[:, None]
        np.add.at(grad, i, g1 * rs)
        np.add.at(grad, j, g2 * rs)
    if spec.xi is not None:
        grad += config.n ** (s / spec.d) * field_gradient(spec.xi, pts, h)
    return grad


def _sorted_candidates(index: NeighborIndex, k: int, extra: int):
    m = min(index.config.n - 1, k + extra)
    nbr = index.all_knn(m)
    rows = np.repeat(np.arange(index.config.n), m)
    return rows, nbr.ravel(), m


def smoothed_energy_and_grad(
    config: PointConfig, spec: RieszSpec, sharpness: float, index: NeighborIndex | None = None, extra: int | None = None, grad: bool = True
):
    """Energy with the k-th-neighbour selection softened, and its gradient.

    For every point the k-1 nearest terms enter exactly; the terms of
    neighbours k..k+extra are combined by an l_p norm with ``p = sharpness``
    instead of taking only the k-th. ``extra`` defaults to k+2, enough that
    the first dropped neighbour (where the candidate set has a kink) carries
    negligible weight near a quasi-uniform configuration. The result is homogeneous in the pair
    terms (so scale covariance is kept), bounds the hard energy from above,
    and converges to it as ``sharpness`` grows. The optimizer uses it as a
    continuation path across neighbour swaps, where the hard energy has kinks.
    """
    index = build_index(config) if index is None else index
    k, s, pts = spec.k, spec.s, config.points
    extra = k + 2 if extra is None else extra
    i, j, m = _sorted_candidates(index, k, extra)
    diff = displacement(pts, config.metric, i, j)
    r2 = np.einsum("ij,ij->i", diff, diff)
    if np.any(r2.reshape(-1, m)[:, :k] == 0):
        return INFINITE_ENERGY, None
    r2 = np.where(r2 == 0, np.inf, r2)
    kap = _kappa(spec, pts, i, j)
    v = (kap * r2 ** (-s / 2)) * np.ones(len(i))
    V = v.reshape(-1, m)
    hard = V[:, : k - 1].sum()
    tail = V[:, k - 1 :]
    top = tail.max(axis=1, keepdims=True)
    ratio = tail / top
    norm_ratio = np.sum(ratio**sharpness, axis=1, keepdims=True) ** (1.0 / sharpness)
    energy = float(hard + np.sum(top * norm_ratio)) + _field_term(spec, pts)
    if not grad:
        return energy, None
    # d||tail||_p / d tail_l = (tail_l / ||tail||_p)^{p-1}
    w = np.ones_like(V)
    w[:, k - 1 :] = (ratio / norm_ratio) ** (sharpness - 1)
    w = w.ravel()
    radial = (-s * w * v / r2)[:, None] * diff
    radial[~np.isfinite(r2)] = 0.0
    g = np.zeros_like(pts)
    np.add.at(g, i, radial)
    np.add.at(g, j, -radial)
    h = _fd_step(config)
    if spec.kappa is not None:
        g1, g2 = _kappa_partials(spec, pts, i, j, h)
        rs = (w * r2 ** (-s / 2))[:, None]
        np.add.at(g, i, g1 * rs)
        np.add.at(g, j, g2 * rs)
    if spec.xi is not None:
        g += config.n ** (s / spec.d) * field_gradient(spec.xi, pts, h)
    return energy, g


class RieszObjective:
    """Optimizer adapter for the truncated energy on a region.

    ``sharpness=None`` gives the exact truncated energy; a finite value gives
    :func:`smoothed_energy_and_grad`.
    """

    def __init__(self, spec: RieszSpec, region: Region, sharpness: float | None = None):
        self.spec = spec
        self.metric = region.metric
        self.sharpness = sharpness

    def _config(self, points):
        return PointConfig(points, self.metric)

    def value(self, points) -> float:
        cfg = self._config(points)
        if self.sharpness is None:
            return energy_knn(cfg, self.spec)
        return smoothed_energy_and_grad(cfg, self.spec, self.sharpness, grad=False)[0]

    def value_and_grad(self, points):
        cfg = self._config(points)
        index = build_index(cfg)
        if self.sharpness is None:
            return energy_knn(cfg, self.spec, index), gradient_knn(cfg, self.spec, index)
        return smoothed_energy_and_grad(cfg, self.spec, self.sharpness, index)


def energy_full(config: PointConfig, spec: RieszSpec) -> float:
    """All-pairs energy sum_{i != j} kappa |x_i - x_j|^{-s} plus the scaled field."""
    if config.n < 2:
        raise RieszError("need at least two points")
    pts = config.points
    dist = pairwise_distances(pts, config.metric)
    iu, ju = np.triu_indices(config.n, k=1)
    r = dist[iu, ju]
    if np.any(r == 0):
        return INFINITE_ENERGY
    if spec.kappa is None:
        pair = 2.0 * float(np.sum(r ** (-spec.s)))
    else:
        pair = float(np.sum((_kappa(spec, pts, iu, ju) + _kappa(spec, pts, ju, iu)) * r ** (-spec.s)))
    return pair + _field_term(spec, pts)


def _circle_offsets(k: int) -> np.ndarray:
    lo, hi = -(k // 2), -(-k // 2)
    return np.array([l for l in range(lo, hi + 1) if l != 0], dtype=float)


def circle_constant(s: float, k: int) -> float:
    """Leading constant on the circle: sum of |l|^{-s} for l in [-floor(k/2), ceil(k/2)], l != 0."""
    if not s > 0 or k < 1:
        raise RieszError("need s > 0 and k >= 1")
    return float(np.sum(np.abs(_circle_offsets(k)) ** (-s)))


def circle_optimal_energy(n: int, s: float, k: int) -> float:
    """Energy of n equally spaced points on the unit-length circle."""
    if n < k + 1:
        raise RieszError("need n >= k + 1")
    return float(n * np.sum((np.abs(_circle_offsets(k)) / n) ** (-s)))


def equally_spaced_circle(n: int) -> PointConfig:
    return PointConfig(np.arange(n)[:, None] / n, "circle-periodic")


def indegree_check(config: PointConfig, k: int, index: NeighborIndex | None = None) -> int:
    """Largest number of points that count a single point among their k nearest neighbours."""
    if config.n < k + 1:
        raise RieszError("need n >= k + 1")
    index = build_index(config) if index is None else index
    counts = np.bincount(index.all_knn(k).ravel(), minlength=config.n)
    return int(counts.max())


# -- reference constants ---------------------------------------------------------


def ball_volume(d: int) -> float:
    """Volume of the unit ball in R^d (the leading constant when s = d)."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def two_zeta(s: float, terms: int = 64) -> float:
    """2 * zeta(s) for s > 1 (full-energy constant on the line).

    Direct summation of the first ``terms`` terms followed by an
    Euler-Maclaurin tail with Bernoulli corrections up to B_8.
    """
    if not s > 1:
        raise RieszError("zeta(s) diverges for s <= 1")
    m = terms
    head = math.fsum(l ** (-s) for l in range(1, m))
    # tail = sum_{l>=m} l^{-s}
    tail = m ** (1 - s) / (s - 1) + 0.5 * m ** (-s)
    bern = (1 / 6, -1 / 30, 1 / 42, -1 / 30)
    rising = s
    fact = 2.0
    for q, b in enumerate(bern, start=1):
        # B_{2q}/(2q)! * s(s+1)...(s+2q-2) * m^{-s-2q+1}
        tail += b / fact * rising * m ** (-s - 2 * q + 1)
        rising *= (s + 2 * q - 1) * (s + 2 * q)
        fact *= (2 * q + 1) * (2 * q + 2)
    return 2.0 * (head + tail)


DEFAULT_SHARPNESS_SCHEDULE = (4.0, 16.0, 64.0, 256.0)


def riesz_stages(spec: RieszSpec, region: Region, schedule=DEFAULT_SHARPNESS_SCHEDULE):
    """(warmup objectives, final objective) for :func:`srint.optimize.minimize`.

    ``schedule`` lists distance exponents q; the l_p sharpness is p = q/s (at
    least 1), so that the softened tail behaves like sum r^{-q} whatever s is.
    """
    warm = tuple(RieszObjective(spec, region, max(1.0, q / spec.s)) for q in schedule)
    return warm, RieszObjective(spec, region)
