"""Point configurations, k-nearest-neighbour index, separation and covering radius."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .regions import Region

BRUTE_FORCE_MAX_N = 64
METRICS = ("euclidean", "circle-periodic")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PointConfig:
    """An N x dim array of points (a multiset: repeated points are allowed)."""

    points: np.ndarray
    metric: str = "euclidean"

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or len(pts) < 1:
            raise ConfigError("points must be a non-empty (N, dim) array")
        if not np.all(np.isfinite(pts)):
            raise ConfigError("coordinates must be finite")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.metric == "circle-periodic" and pts.shape[1] != 1:
            raise ConfigError("the periodic metric is one-dimensional")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n

    @classmethod
    def on(cls, region: Region, points) -> "PointConfig":
        return cls(points, region.metric)

    def with_points(self, points) -> "PointConfig":
        return PointConfig(points, self.metric)


def displacement(points: np.ndarray, metric: str, i, j) -> np.ndarray:
    """x_i - x_j, wrapped to the shortest representative on the periodic circle."""
    diff = points[i] - points[j]
    if metric == "circle-periodic":
        diff = diff - np.round(diff)
    return diff


def pairwise_distances(points: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    if metric == "circle-periodic":
        diff = diff - np.round(diff)
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def brute_force_knn(points: np.ndarray, k: int, metric: str = "euclidean") -> np.ndarray:
    """O(N^2) reference: (N, k) neighbour indices sorted by (distance, index)."""
    dist = pairwise_distances(points, metric)
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


@dataclass(frozen=True)
class NeighborIndex:
    """Immutable snapshot of a configuration prepared for k-NN queries."""

    config: PointConfig
    tree: cKDTree | None = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def k_max(self) -> int:
        return self.config.n - 1

    def all_knn(self, k: int) -> np.ndarray:
        """(N, k) neighbour indices of every point, ties broken by smaller index."""
        n = self.config.n
        if not 1 <= k <= n - 1:
            raise ConfigError(f"k must be in [1, {n - 1}], got {k}")
        if k not in self._cache:
            if self.tree is None:
                self._cache[k] = brute_force_knn(self.config.points, k, self.config.metric)
            else:
                self._cache[k] = _tree_knn(self, k)
        return self._cache[k]

    def neighbor_distances(self, k: int) -> np.ndarray:
        nbr = self.all_knn(k)
        pts = self.config.points
        rows = np.repeat(np.arange(self.config.n), k)
        diff = displacement(pts, self.config.metric, rows, nbr.ravel())
        return np.linalg.norm(diff, axis=1).reshape(-1, k)


def _wrap01(x: np.ndarray) -> np.ndarray:
    out = np.mod(x, 1.0)
    out[out >= 1.0] = 0.0
    return out


def _tree_knn(index: NeighborIndex, k: int) -> np.ndarray:
    pts = index.config.points
    metric = index.config.metric
    n = len(pts)
    out = np.empty((n, k), dtype=np.intp)
    pending = np.arange(n)
    pad = 4
    while len(pending):
        m = min(n, k + 1 + pad)
        tree_d, cand = index.tree.query(pts[pending], k=m)
        cand = np.asarray(cand).reshape(len(pending), m)
        tree_d = np.asarray(tree_d).reshape(len(pending), m)
        rows = np.repeat(pending, m)
        exact = np.linalg.norm(displacement(pts, metric, rows, cand.ravel()), axis=1).reshape(len(pending), m)
        exact[cand == pending[:, None]] = np.inf
        order = _row_lexsort(exact, cand)
        chosen = np.take_along_axis(cand, order[:, :k], axis=1)
        kth = np.take_along_axis(exact, order[:, k - 1 : k], axis=1)[:, 0]
        # Ties may continue past the queried set unless the k-th distance is
        # strictly inside it.
        ok = (m == n) | (kth < tree_d[:, -1] * (1 - 1e-9))
        out[pending[ok]] = chosen[ok]
        pending = pending[~ok]
        pad *= 4
    return out


def _row_lexsort(primary: np.ndarray, secondary: np.ndarray) -> np.ndarray:
    by_secondary = np.argsort(secondary, axis=1, kind="stable")
    prim = np.take_along_axis(primary, by_secondary, axis=1)
    by_primary = np.argsort(prim, axis=1, kind="stable")
    return np.take_along_axis(by_secondary, by_primary, axis=1)


def build_index(config: PointConfig) -> NeighborIndex:
    if config.n < 2:
        raise ConfigError("a neighbour index needs at least two points")
    if config.n <= BRUTE_FORCE_MAX_N:
        return NeighborIndex(config, None)
    if config.metric == "circle-periodic":
        tree = cKDTree(_wrap01(config.points), boxsize=1.0)
    else:
        tree = cKDTree(config.points)
    return NeighborIndex(config, tree)


def knn(index: NeighborIndex, i: int, k: int) -> list[int]:
    """Indices of the k nearest neighbours of point i, nearest first."""
    n = index.config.n
    if k >= n:
        raise ConfigError(f"k={k} needs more than {n} points")
    if k < 1:
        raise ConfigError("k must be at least 1")
    return [int(j) for j in index.all_knn(k)[i]]


def separation(config: PointConfig) -> float:
    """Smallest nearest-neighbour distance (0.0 when points coincide)."""
    if config.n < 2:
        raise ConfigError("separation needs at least two points")
    return float(build_index(config).neighbor_distances(1).min())


def covering_radius(config: PointConfig, region: Region, probes: int = 10_000, seed: int = 0, exact: bool = False) -> float:
    """Largest distance from a point of the region to the configuration.

    The probe estimate (max over ``probes`` uniform samples) is a lower bound.
    ``exact=True`` is available for one-dimensional intervals and the circle,
    where the answer is attained at cell midpoints or interval ends.
    """
    if exact:
        return _covering_radius_1d(config, region)
    if probes < 1:
        raise ConfigError("probes must be positive")
    y = region.sample_uniform(probes, seed)
    if config.metric == "circle-periodic":
        tree = cKDTree(_wrap01(config.points), boxsize=1.0)
        y = _wrap01(y)
    else:
        tree = cKDTree(config.points)
    dist, _ = tree.query(y, k=1)
    return float(np.max(dist))


def _covering_radius_1d(config: PointConfig, region: Region) -> float:
    if config.dim != 1 or region.kind not in ("box", "circle-periodic"):
        raise ConfigError("exact covering radius is implemented for 1D intervals and the circle")
    x = np.sort(config.points[:, 0])
    if region.kind == "circle-periodic":
        x = np.mod(x, 1.0)
        x.sort()
        gaps = np.diff(np.concatenate([x, [x[0] + 1.0]]))
        return float(gaps.max() / 2)
    a = region.corners[0, 0]
    b = a + region.sides[0, 0]
    inner = np.diff(x).max() / 2 if len(x) > 1 else 0.0
    return float(max(x[0] - a, b - x[-1], inner))


# -- CSV ----------------------------------------------------------------------


def format_csv(config: PointConfig) -> str:
    buf = io.StringIO()
    buf.write(f"# dim={config.dim} n={config.n}\n")
    for row in config.points:
        buf.write(",".join(f"{v:.17g}" for v in row))
        buf.write("\n")
    return buf.getvalue()


def write_csv(config: PointConfig, path: str | Path) -> None:
    Path(path).write_text(format_csv(config))


def read_csv(path: str | Path, metric: str = "euclidean") -> PointConfig:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ConfigError("missing '# dim=d n=N' header")
    header = dict(tok.split("=") for tok in lines[0][1:].split())
    dim, n = int(header["dim"]), int(header["n"])
    rows = [[float(v) for v in line.split(",")] for line in lines[1:] if line.strip()]
    pts = np.array(rows, dtype=float).reshape(-1, dim)
    if len(pts) != n:
        raise ConfigError(f"header says n={n}, found {len(pts)} rows")
    return PointConfig(pts, metric)
