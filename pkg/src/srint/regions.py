"""Compact sets that configurations live on."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

BOUNDARY_TOL = 1e-12
MAX_REJECTION_ATTEMPTS = 10**6

KINDS = ("box", "ball", "box-union", "circle-periodic", "sphere-surface")


class RegionError(ValueError):
    pass


def _as_point(region: "Region", x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != region.dim:
        raise RegionError(f"point has dimension {x.shape[-1]}, region has {region.dim}")
    return x


@dataclass(frozen=True)
class Region:
    """A compact set A together with its bounding box (which stands in for Omega).

    Use the constructors :func:`box`, :func:`ball`, :func:`box_union`,
    :func:`circle`, :func:`sphere` rather than building this directly.
    ``corners``/``sides`` hold one row per member box; ``center``/``radius``
    describe balls and spheres.
    """

    kind: str
    dim: int
    intrinsic_dim: int
    corners: np.ndarray = field(default=None, repr=False)
    sides: np.ndarray = field(default=None, repr=False)
    center: np.ndarray = field(default=None, repr=False)
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RegionError(f"unsupported region kind {self.kind!r}")
        for name in ("corners", "sides", "center"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    # -- geometry ------------------------------------------------------------

    @property
    def metric(self) -> str:
        return "circle-periodic" if self.kind == "circle-periodic" else "euclidean"

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind in ("box", "box-union", "circle-periodic"):
            lo = self.corners.min(axis=0)
            hi = (self.corners + self.sides).max(axis=0)
        else:
            lo = self.center - self.radius
            hi = self.center + self.radius
        return lo, hi

    @property
    def diameter(self) -> float:
        if self.kind == "circle-periodic":
            return 0.5
        if self.kind in ("ball", "sphere-surface"):
            return 2.0 * self.radius
        lo, hi = self.bounding_box
        return float(np.linalg.norm(hi - lo))

    def contains(self, x) -> bool | np.ndarray:
        """Membership, inclusive of the boundary up to 1e-12. Accepts (d,) or (n, d)."""
        x = _as_point(self, x)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        tol = BOUNDARY_TOL
        if self.kind in ("box", "box-union"):
            inside = np.zeros(len(x), dtype=bool)
            for c, s in zip(self.corners, self.sides):
                inside |= np.all((x >= c - tol) & (x <= c + s + tol), axis=1)
        elif self.kind == "circle-periodic":
            inside = (x[:, 0] >= -tol) & (x[:, 0] < 1.0)
        elif self.kind == "ball":
            inside = np.linalg.norm(x - self.center, axis=1) <= self.radius + tol
        else:
            inside = np.abs(np.linalg.norm(x - self.center, axis=1) - self.radius) <= tol * max(1.0, self.radius)
        return bool(inside[0]) if single else inside

    def project(self, x) -> np.ndarray:
        """Nearest point of A (componentwise for boxes, radial for balls and spheres)."""
        x = _as_point(self, x)
        single = x.ndim == 1
        x = np.array(np.atleast_2d(x), dtype=float)
        if self.kind == "box":
            out = np.clip(x, self.corners[0], self.corners[0] + self.sides[0])
        elif self.kind == "box-union":
            best = None
            best_d = None
            for c, s in zip(self.corners, self.sides):
                cand = np.clip(x, c, c + s)
                dist = np.linalg.norm(cand - x, axis=1)
                if best is None:
                    best, best_d = cand, dist
                else:
                    closer = dist < best_d
                    best[closer] = cand[closer]
                    best_d = np.where(closer, dist, best_d)
            out = best
        elif self.kind == "circle-periodic":
            out = np.mod(x, 1.0)
            out[out >= 1.0] = 0.0
        else:
            v = x - self.center
            # Rescale first so that tiny offsets do not underflow in the norm.
            big = np.max(np.abs(v), axis=1)
            zero = big == 0
            v[zero] = 0.0
            v[zero, -1] = 1.0
            big = np.where(zero, 1.0, big)
            u = v / big[:, None]
            norm_u = np.linalg.norm(u, axis=1)
            r = norm_u * big
            unit = u / norm_u[:, None]
            length = np.minimum(r, self.radius) if self.kind == "ball" else np.full(len(r), self.radius)
            out = self.center + unit * length[:, None]
            keep = self.contains(x)
            out[keep] = x[keep]
        return out[0] if single else out

    def measure(self) -> float:
        """Lebesgue measure for full-dimensional kinds; surface area for spheres."""
        if self.kind in ("box", "box-union", "circle-periodic"):
            return float(np.sum(np.prod(self.sides, axis=1)))
        if self.kind == "ball":
            d = self.dim
            return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius**d
        if self.kind == "sphere-surface":
            d = self.dim
            return 2 * math.pi ** (d / 2) / math.gamma(d / 2) * self.radius ** (d - 1)
        raise RegionError(f"measure undefined for {self.kind!r}")

    def sample_uniform(self, n: int, seed: int | np.random.Generator) -> np.ndarray:
        """n i.i.d. uniform points; deterministic in ``seed``."""
        if n < 1:
            raise RegionError("need at least one sample")
        rng = np.random.default_rng(seed)
        if self.kind == "sphere-surface" and self.dim == 3:
            # Archimedes: z and azimuth uniform is area-preserving.
            z = rng.uniform(-1.0, 1.0, n)
            phi = rng.uniform(0.0, 2 * math.pi, n)
            r = np.sqrt(1 - z**2)
            return self.center + self.radius * np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        if self.kind == "sphere-surface":
            g = rng.standard_normal((n, self.dim))
            g /= np.linalg.norm(g, axis=1)[:, None]
            return self.center + self.radius * g
        if self.kind == "box":
            return self.corners[0] + rng.random((n, self.dim)) * self.sides[0]
        if self.kind == "circle-periodic":
            return rng.random((n, 1))
        lo, hi = self.bounding_box
        out = np.empty((0, self.dim))
        attempts = 0
        while len(out) < n:
            batch = max(64, 2 * (n - len(out)))
            attempts += batch
            if attempts > MAX_REJECTION_ATTEMPTS:
                raise RegionError(f"rejection sampling exceeded {MAX_REJECTION_ATTEMPTS} attempts")
            cand = lo + rng.random((batch, self.dim)) * (hi - lo)
            out = np.vstack([out, cand[self.contains(cand)]])
        return out[:n]

    def grid_samples(self, n: int) -> np.ndarray:
        """Cell-centred lattice of roughly n points of the bounding box, restricted to A.

        Each returned point carries weight ``measure() / len(points)``.
        """
        if self.kind == "sphere-surface":
            if self.dim != 3:
                raise RegionError("grid samples on spheres need ambient dimension 3")
            # Fibonacci lattice, area-equidistributed.
            i = np.arange(n) + 0.5
            z = 1 - 2 * i / n
            phi = math.pi * (1 + 5**0.5) * i
            r = np.sqrt(1 - z**2)
            pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
            return self.center + self.radius * pts
        lo, hi = self.bounding_box
        ext = hi - lo
        per_unit = (n / np.prod(ext)) ** (1.0 / self.dim)
        counts = np.maximum(1, np.round(ext * per_unit).astype(int))
        axes = [lo[a] + (np.arange(counts[a]) + 0.5) * ext[a] / counts[a] for a in range(self.dim)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        return pts[self.contains(pts)]

    def sample_quasi_uniform(self, n: int, seed: int | np.random.Generator) -> np.ndarray:
        """n well-spread points, used as optimizer starts.

        Intervals, unions of intervals and the circle get jittered cell
        midpoints (points shared among pieces in proportion to length);
        two-dimensional boxes get a jittered triangular lattice; other sets
        get a scrambled Halton sequence restricted to A; the 2-sphere gets a
        randomly rotated Fibonacci lattice.
        """
        if n < 1:
            raise RegionError("need at least one sample")
        rng = np.random.default_rng(seed)
        if self.dim == 1 and self.kind in ("box", "box-union", "circle-periodic"):
            lengths = self.sides[:, 0]
            share = n * lengths / lengths.sum()
            counts = np.floor(share).astype(int)
            # Largest remainder, ties to the earlier piece.
            extra = np.argsort(-(share - counts), kind="stable")[: n - counts.sum()]
            counts[extra] += 1
            out = []
            for c, s, m in zip(self.corners[:, 0], lengths, counts):
                if m:
                    h = s / m
                    out.append(c + (np.arange(m) + 0.5 + 0.1 * rng.standard_normal(m)) * h)
            return self.project(np.concatenate(out)[:, None])
        if self.kind == "sphere-surface" and self.dim == 3:
            from scipy.spatial.transform import Rotation

            pts = (self.grid_samples(n) - self.center) / self.radius
            return self.center + self.radius * Rotation.random(random_state=rng).apply(pts)
        if self.kind == "sphere-surface":
            return self.sample_uniform(n, rng)
        if self.kind == "box" and self.dim == 2:
            return self._triangular_start(n, rng)
        from scipy.stats import qmc

        lo, hi = self.bounding_box
        halton = qmc.Halton(self.dim, scramble=True, seed=rng)
        out = np.empty((0, self.dim))
        drawn = 0
        while len(out) < n:
            batch = max(64, 2 * (n - len(out)))
            drawn += batch
            if drawn > MAX_REJECTION_ATTEMPTS:
                raise RegionError(f"rejection sampling exceeded {MAX_REJECTION_ATTEMPTS} attempts")
            cand = lo + halton.random(batch) * (hi - lo)
            out = np.vstack([out, cand[self.contains(cand)]])
        return out[:n]

    def _triangular_start(self, n: int, rng: np.random.Generator) -> np.ndarray:
        # Jittered triangular lattice at density about n / area, shrunk until
        # it holds at least n sites; the surplus is dropped at random.
        lo, side = self.corners[0], self.sides[0]
        a = math.sqrt(2.0 * float(np.prod(side)) / (math.sqrt(3.0) * n))
        while True:
            h = a * math.sqrt(3.0) / 2.0
            rows = []
            for i, y in enumerate(np.arange(h / 2, side[1], h)):
                x = np.arange(a / 4 + (a / 2 if i % 2 else 0.0), side[0], a)
                rows.append(np.column_stack([x, np.full(len(x), y)]))
            pts = np.vstack(rows)
            if len(pts) >= n:
                break
            a *= 0.98
        pts = lo + pts[np.sort(rng.permutation(len(pts))[:n])]
        return self.project(pts + rng.normal(0.0, 0.02 * a, pts.shape))

    def components(self) -> list["Region"]:
        """Member boxes of a union (a single-element list otherwise)."""
        if self.kind != "box-union":
            return [self]
        return [box(c, s) for c, s in zip(self.corners, self.sides)]

    def scaled(self, c: float, shift=None) -> "Region":
        """Image under x -> c*x + shift."""
        shift = np.zeros(self.dim) if shift is None else np.asarray(shift, dtype=float)
        if self.kind in ("box", "box-union"):
            return Region(self.kind, self.dim, self.intrinsic_dim, c * self.corners + shift, c * self.sides)
        if self.kind in ("ball", "sphere-surface"):
            return Region(self.kind, self.dim, self.intrinsic_dim, center=c * self.center + shift, radius=c * self.radius)
        raise RegionError("the periodic circle has fixed length")

    def to_json(self) -> dict[str, Any]:
        if self.kind == "box":
            sides = self.sides[0]
            side = float(sides[0]) if np.all(sides == sides[0]) else sides.tolist()
            return {"kind": "box", "dim": self.dim, "corner": self.corners[0].tolist(), "side": side}
        if self.kind == "box-union":
            return {
                "kind": "box-union",
                "dim": self.dim,
                "boxes": [{"corner": c.tolist(), "side": s.tolist()} for c, s in zip(self.corners, self.sides)],
            }
        if self.kind == "circle-periodic":
            return {"kind": "circle-periodic", "dim": 1}
        return {"kind": self.kind, "dim": self.dim, "center": self.center.tolist(), "radius": self.radius}


def box(corner, side) -> Region:
    corner = np.atleast_1d(np.asarray(corner, dtype=float))
    side = np.broadcast_to(np.asarray(side, dtype=float), corner.shape)
    if np.any(side <= 0):
        raise RegionError("box sides must be positive")
    return Region("box", len(corner), len(corner), corner[None, :], side[None, :])


def unit_box(dim: int) -> Region:
    return box(np.zeros(dim), 1.0)


def box_union(boxes) -> Region:
    """Union of boxes given as (corner, side) pairs; interiors must be disjoint."""
    members = [box(c, s) for c, s in boxes]
    if not members:
        raise RegionError("empty box union")
    dim = members[0].dim
    if any(m.dim != dim for m in members):
        raise RegionError("box dimensions differ")
    corners = np.vstack([m.corners for m in members])
    sides = np.vstack([m.sides for m in members])
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            overlap = np.minimum(corners[i] + sides[i], corners[j] + sides[j]) - np.maximum(corners[i], corners[j])
            if np.all(overlap > 0):
                raise RegionError(f"boxes {i} and {j} have overlapping interiors")
    return Region("box-union", dim, dim, corners, sides)


def ball(center, radius: float) -> Region:
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if radius <= 0:
        raise RegionError("radius must be positive")
    return Region("ball", len(center), len(center), center=center, radius=float(radius))


def sphere(center=(0.0, 0.0, 0.0), radius: float = 1.0) -> Region:
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if radius <= 0:
        raise RegionError("radius must be positive")
    if len(center) < 2:
        raise RegionError("sphere needs ambient dimension >= 2")
    return Region("sphere-surface", len(center), len(center) - 1, center=center, radius=float(radius))


def circle() -> Region:
    """The interval [0, 1) with wrap-around distance min(|x-y|, 1-|x-y|)."""
    return Region("circle-periodic", 1, 1, np.zeros((1, 1)), np.ones((1, 1)))


def from_json(spec: dict) -> Region:
    kind = spec.get("kind")
    if kind == "box":
        dim = int(spec.get("dim", len(np.atleast_1d(spec.get("corner", [0.0])))))
        corner = spec.get("corner", [0.0] * dim)
        if len(corner) != dim:
            raise RegionError("corner length does not match dim")
        return box(corner, spec.get("side", 1.0))
    if kind == "box-union":
        return box_union([(b["corner"], b["side"]) for b in spec["boxes"]])
    if kind == "ball":
        return ball(spec.get("center", [0.0] * int(spec.get("dim", 2))), spec.get("radius", 1.0))
    if kind == "sphere-surface":
        return sphere(spec.get("center", [0.0] * int(spec.get("dim", 3))), spec.get("radius", 1.0))
    if kind == "circle-periodic":
        return circle()
    raise RegionError(f"unsupported region kind {kind!r}")
