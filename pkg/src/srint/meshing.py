"""Persson-Strang spring functional on the 2D Delaunay graph and its relaxation loop.

With ``c = (1 + P) m2`` (``m2`` the mean squared Delaunay edge length) the
functional is::

    e_hat = sum_i sum_{j in T_i} 1/2 (c - |x_i - x_j|^2)_+

summed over directed edges, so every undirected edge contributes
``(c - l^2)_+`` once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .config import PointConfig
from .regions import Region

INCIRCLE_TOL = 1e-10


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class MeshState:
    """A configuration with its Delaunay graph and the frozen mean squared edge length."""

    config: PointConfig
    triangles: np.ndarray  # (T, 3) vertex indices, counter-clockwise
    edges: np.ndarray  # (E, 2) undirected edges, i < j, sorted
    m2: float
    P: float = 0.2
    adjacency: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if not self.P > 0:
            raise MeshError("pressure P must be positive")
        if not self.adjacency:
            adj = [set() for _ in range(self.config.n)]
            for i, j in self.edges:
                adj[i].add(int(j))
                adj[j].add(int(i))
            object.__setattr__(self, "adjacency", tuple(frozenset(a) for a in adj))

    @classmethod
    def from_edges(cls, config: PointConfig, edges, P: float = 0.2, triangles=None) -> "MeshState":
        """A mesh on an explicit edge list (m2 computed from the current points)."""
        e = _normalize_edges(np.asarray(edges, dtype=np.intp).reshape(-1, 2))
        tri = np.zeros((0, 3), dtype=np.intp) if triangles is None else np.asarray(triangles, dtype=np.intp)
        return cls(config, tri, e, _mean_sq(config.points, e), P)

    @property
    def directed_edge_count(self) -> int:
        return 2 * len(self.edges)

    @property
    def pressure_threshold(self) -> float:
        return (1.0 + self.P) * self.m2

    def with_points(self, points, freeze_m2: bool = False) -> "MeshState":
        """Same graph on new coordinates; m2 recomputed unless frozen."""
        cfg = PointConfig(points, self.config.metric)
        m2 = self.m2 if freeze_m2 else _mean_sq(cfg.points, self.edges)
        return MeshState(cfg, self.triangles, self.edges, m2, self.P, self.adjacency)


def _normalize_edges(e: np.ndarray) -> np.ndarray:
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0) if len(e) else e.reshape(0, 2)


def _mean_sq(pts: np.ndarray, edges: np.ndarray) -> float:
    if len(edges) == 0:
        return 0.0
    d = pts[edges[:, 0]] - pts[edges[:, 1]]
    return float(np.mean(np.einsum("ij,ij->i", d, d)))


# -- Delaunay -------------------------------------------------------------------


def incircle(a, b, c, d) -> np.ndarray:
    """In-circle predicate, scale-normalized: > 0 when d is strictly inside the
    circle through the counter-clockwise triangle (a, b, c)."""
    a, b, c, d = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (a, b, c, d))
    rows = [a - d, b - d, c - d]
    m = np.stack([np.stack([r[:, 0], r[:, 1], r[:, 0] ** 2 + r[:, 1] ** 2], axis=1) for r in rows], axis=1)
    det = np.linalg.det(m)
    scale = max(np.max(np.abs(np.concatenate(rows))), 1e-300) ** 4
    return det / scale


def _orient(pts, tri):
    a, b, c = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    tri = tri.copy()
    flip = cross < 0
    tri[flip, 1], tri[flip, 2] = tri[flip, 2], tri[flip, 1].copy()
    return tri


def _edges_of(tri: np.ndarray) -> np.ndarray:
    return _normalize_edges(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]))


def delaunay2d(config: PointConfig, P: float = 0.2) -> MeshState:
    """Delaunay triangulation of a planar configuration.

    Cocircular quadrilaterals, where both diagonals are valid, get the
    diagonal that maximizes e_hat; exact ties go to the lexicographically
    smaller edge. Points that repeat an earlier point are attached by a single
    edge to the vertex they coincide with.
    """
    if config.dim != 2:
        raise MeshError("delaunay2d needs planar points")
    if config.n < 3:
        raise MeshError("delaunay2d needs at least three points")
    pts = config.points
    try:
        dt = Delaunay(pts)
    except QhullError as exc:
        raise MeshError("degenerate input: points are collinear") from exc
    tri = _orient(pts, np.asarray(dt.simplices, dtype=np.intp))
    extra = []
    if len(dt.coplanar):
        # (point, simplex, nearest vertex) for points left out of the triangulation.
        extra = [(int(p), int(v)) for p, _, v in dt.coplanar]
    tri = _resolve_cocircular(pts, tri, P, extra)
    edges = _edges_of(tri)
    if extra:
        edges = _normalize_edges(np.concatenate([edges, np.array(extra, dtype=np.intp)]))
    return MeshState(config, tri, edges, _mean_sq(pts, edges), P)


def _spring_from_lengths(l2: np.ndarray, P: float) -> float:
    c = (1.0 + P) * float(np.mean(l2))
    return float(np.sum(np.maximum(c - l2, 0.0)))


def _resolve_cocircular(pts, tri, P, extra, max_passes: int = 50):
    """Flip cocircular diagonals towards larger e_hat (ties: smaller edge).

    Each pass evaluates every cocircular interior edge against the current
    triangulation and applies the improving flips whose quadrilaterals do not
    share a triangle.
    """
    for _ in range(max_passes):
        edge_tris: dict[tuple, list] = {}
        for t, (a, b, c) in enumerate(tri.tolist()):
            for u, v, w in ((a, b, c), (b, c, a), (c, a, b)):
                edge_tris.setdefault((min(u, v), max(u, v)), []).append((t, w))
        inner = [(e, ts) for e, ts in edge_tris.items() if len(ts) == 2]
        if not inner:
            return tri
        t0 = np.array([ts[0][0] for _, ts in inner])
        opp = np.array([ts[1][1] for _, ts in inner])
        tt = tri[t0]
        cocirc = np.abs(incircle(pts[tt[:, 0]], pts[tt[:, 1]], pts[tt[:, 2]], pts[opp])) <= INCIRCLE_TOL
        if not np.any(cocirc):
            return tri
        all_edges = _edges_of(tri)
        if extra:
            all_edges = _normalize_edges(np.concatenate([all_edges, np.array(extra, dtype=np.intp)]))
        l2 = _sq_lengths(pts, all_edges)
        base = _spring_from_lengths(l2, P)
        lookup = {e: n for n, e in enumerate(map(tuple, all_edges.tolist()))}
        used: set = set()
        tri = tri.copy()
        flipped = False
        for idx in np.flatnonzero(cocirc):
            (a, b), ((ta, c), (tb, d)) = inner[idx]
            new = (min(c, d), max(c, d))
            if new in lookup or ta in used or tb in used:
                continue
            trial = l2.copy()
            trial[lookup[(a, b)]] = float(np.sum((pts[c] - pts[d]) ** 2))
            value = _spring_from_lengths(trial, P)
            if value > base or (value == base and new < (a, b)):
                tri[ta] = [c, d, a]
                tri[tb] = [d, c, b]
                used.update((ta, tb))
                flipped = True
        if not flipped:
            return tri
        tri = _orient(pts, tri)
    return tri


def _sq_lengths(pts, edges):
    d = pts[edges[:, 0]] - pts[edges[:, 1]]
    return np.einsum("ij,ij->i", d, d)


def empty_circumcircle_violations(mesh: MeshState, tol: float = INCIRCLE_TOL) -> int:
    """Number of (triangle, point) pairs with a point strictly inside a circumcircle."""
    pts = mesh.config.points
    tri = mesh.triangles
    bad = 0
    for start in range(0, len(tri), 256):
        block = tri[start : start + 256]
        a, b, c = pts[block[:, 0]], pts[block[:, 1]], pts[block[:, 2]]
        for_all = incircle(
            np.repeat(a, len(pts), axis=0),
            np.repeat(b, len(pts), axis=0),
            np.repeat(c, len(pts), axis=0),
            np.tile(pts, (len(block), 1)),
        ).reshape(len(block), len(pts))
        for r, t in enumerate(block):
            for_all[r, t] = 0.0
        bad += int(np.sum(for_all > tol))
    return bad


# -- energy and forces -------------------------------------------------------------------


def _edge_data(mesh: MeshState, points):
    pts = mesh.config.points if points is None else np.asarray(points, dtype=float)
    e = mesh.edges
    diff = pts[e[:, 0]] - pts[e[:, 1]]
    l2 = np.einsum("ij,ij->i", diff, diff)
    return pts, e, diff, l2


def spring_energy(mesh: MeshState, points=None) -> float:
    """e_hat with the graph and m2 of ``mesh`` (optionally at other coordinates)."""
    _, _, _, l2 = _edge_data(mesh, points)
    return float(np.sum(np.maximum(mesh.pressure_threshold - l2, 0.0)))


def spring_energy_gradient(mesh: MeshState, points=None, include_m2: bool = False) -> np.ndarray:
    """Gradient of e_hat on a fixed graph.

    By default m2 is frozen: each compressed edge contributes -2 (x_i - x_j)
    to point i. ``include_m2`` adds the dependence of m2 on the points.
    """
    pts, e, diff, l2 = _edge_data(mesh, points)
    c = mesh.pressure_threshold
    if include_m2:
        c = (1.0 + mesh.P) * float(np.mean(l2))
    active = (c - l2) > 0
    g = np.zeros_like(pts)
    contrib = -2.0 * diff[active]
    np.add.at(g, e[active, 0], contrib)
    np.add.at(g, e[active, 1], -contrib)
    if include_m2 and len(e):
        # d m2 / d x_i = (2 / E) sum over edges at i of (x_i - x_j)
        dm2 = np.zeros_like(pts)
        np.add.at(dm2, e[:, 0], 2.0 * diff / len(e))
        np.add.at(dm2, e[:, 1], -2.0 * diff / len(e))
        g += (1.0 + mesh.P) * int(np.sum(active)) * dm2
    return g


def spring_potential(mesh: MeshState, points=None) -> float:
    """1/8 sum over directed edges of ((c - l^2)_+)^2, whose negative gradient is :func:`spring_forces`."""
    _, _, _, l2 = _edge_data(mesh, points)
    return 0.25 * float(np.sum(np.maximum(mesh.pressure_threshold - l2, 0.0) ** 2))


def spring_forces(mesh: MeshState, points=None) -> np.ndarray:
    """Repulsive Hooke forces: each compressed edge pushes both endpoints apart
    with magnitude (c - l^2) * l, c = (1 + P) m2 (graph and m2 frozen)."""
    pts, e, diff, l2 = _edge_data(mesh, points)
    push = np.maximum(mesh.pressure_threshold - l2, 0.0)
    f = np.zeros_like(pts)
    contrib = push[:, None] * diff
    np.add.at(f, e[:, 0], contrib)
    np.add.at(f, e[:, 1], -contrib)
    return f


# -- relaxation ----------------------------------------------------------------------------


@dataclass
class RelaxTraceRow:
    iter: int
    energy: float
    max_move: float


@dataclass
class RelaxResult:
    config: PointConfig
    mesh: MeshState
    trace: list[RelaxTraceRow]


def _separate_duplicates(x: np.ndarray, region: Region, scale: float, rng) -> np.ndarray:
    """Nudge repeated points (e.g. two escapees clamped to one corner) apart."""
    for _ in range(10):
        pairs = cKDTree(x).query_pairs(1e-12 * scale, output_type="ndarray")
        if len(pairs) == 0:
            return x
        movers = np.unique(pairs[:, 1])
        x = x.copy()
        x[movers] = region.project(x[movers] + 1e-6 * scale * rng.standard_normal((len(movers), 2)))
    return x


def relax(
    config: PointConfig, region: Region, P: float = 0.2, dt: float = 0.1, iters: int = 500, seed: int = 0
) -> RelaxResult:
    """Explicit Euler steps x <- x + dt * F(x) / m2, re-triangulating every step.

    Forces are divided by the current m2 so that ``dt`` is dimensionless (the
    update has the same effect at every point spacing). Points leaving A are
    projected back.
    """
    if region.dim != 2:
        raise MeshError("relax works on planar regions")
    if not dt > 0:
        raise MeshError("dt must be positive")
    rng = np.random.default_rng(seed)
    scale = region.diameter
    x = region.project(np.array(config.points, dtype=float))
    x = _separate_duplicates(x, region, scale, rng)
    trace = []
    for it in range(iters + 1):
        mesh = delaunay2d(PointConfig(x), P)
        energy = spring_energy(mesh)
        if it == iters or mesh.m2 == 0:
            trace.append(RelaxTraceRow(it, energy, 0.0))
            break
        step = dt * spring_forces(mesh) / mesh.m2
        new = region.project(x + step)
        new = _separate_duplicates(new, region, scale, rng)
        trace.append(RelaxTraceRow(it, energy, float(np.max(np.linalg.norm(new - x, axis=1)))))
        x = new
    return RelaxResult(PointConfig(x), mesh, trace)


class SpringObjective:
    """Optimizer adapter for e_hat (re-triangulated per evaluation), for maximize mode."""

    def __init__(self, P: float = 0.2):
        self.P = P

    def value(self, points) -> float:
        try:
            return spring_energy(delaunay2d(PointConfig(points), self.P))
        except MeshError:
            return float("nan")

    def value_and_grad(self, points):
        mesh = delaunay2d(PointConfig(points), self.P)
        return spring_energy(mesh), spring_energy_gradient(mesh, include_m2=True)


# -- export ---------------------------------------------------------------------------------


def format_off(mesh: MeshState) -> str:
    pts = mesh.config.points
    lines = ["OFF", f"{len(pts)} {len(mesh.triangles)} 0"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in pts]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    return "\n".join(lines) + "\n"


def write_off(mesh: MeshState, path: str | Path) -> None:
    Path(path).write_text(format_off(mesh))


def grid_config(n_side: int) -> PointConfig:
    """n_side x n_side lattice on [0,1]^2 including the boundary, row-major."""
    t = np.linspace(0.0, 1.0, n_side)
    gx, gy = np.meshgrid(t, t, indexing="xy")
    return PointConfig(np.stack([gx.ravel(), gy.ravel()], axis=1))
