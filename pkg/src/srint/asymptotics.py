"""Rate exponents and leading constants from minimizer sequences, and the split probe."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .config import PointConfig
from .expr import Expr
from .optimize import OptimizeOptions, minimize
from .quantize import LloydResult, Quadrature, QuantSpec, lloyd, newton_1d, quant_energy
from .regions import Region, box_union
from .riesz import RieszSpec, energy_knn, riesz_stages

DEFAULT_N_GRID = (64, 96, 128, 192, 256, 384, 512)


class AsymptoticsError(ValueError):
    pass


@dataclass
class AsymptoticsFit:
    exponent: float
    intercept: float
    f1_estimate: float
    theory_exponent: float
    n_grid: list[int]
    residuals: list[float]

    def to_json(self) -> dict:
        return {
            "exponent": self.exponent,
            "f1_estimate": self.f1_estimate,
            "theory_exponent": self.theory_exponent,
            "n_grid": list(self.n_grid),
            "residuals": list(self.residuals),
        }


def fit_rate(series, theory_exponent: float | None = None) -> AsymptoticsFit:
    """Least-squares slope of log|E| against log N.

    ``f1_estimate`` is the mean of |E| / N^theory_exponent over the largest
    half (rounded up) of the N values; without a theory exponent the fitted
    slope is used. Energies must share one sign (negative values arise in
    maximize mode).
    """
    pairs = sorted((int(n), float(e)) for n, e in series)
    if len(pairs) < 4:
        raise AsymptoticsError("fit_rate needs at least four (N, energy) pairs")
    n = np.array([p[0] for p in pairs], dtype=float)
    e = np.array([p[1] for p in pairs])
    if np.any(np.diff(n) <= 0):
        raise AsymptoticsError("N values must be distinct")
    if not (np.all(e > 0) or np.all(e < 0)):
        raise AsymptoticsError("energies must be all positive or all negative")
    x, y = np.log(n), np.log(np.abs(e))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    expo = float(slope) if theory_exponent is None else float(theory_exponent)
    top = math.ceil(len(n) / 2)
    f1 = float(np.mean(np.abs(e[-top:]) / n[-top:] ** expo))
    return AsymptoticsFit(
        float(slope),
        float(intercept),
        f1,
        float(expo),
        [int(v) for v in n],
        [float(r) for r in resid],
    )


# -- minimizer driver --------------------------------------------------------------


@dataclass(frozen=True)
class MinimizerParams:
    """Everything needed to produce a (near-)optimal configuration of one family."""

    family: str = "riesz"  # riesz | quantizer
    s: float = 2.0
    k: int = 1
    p: float = 2.0
    kappa: Expr | None = None
    xi: Expr | None = None
    eta: Expr | None = None
    restarts: int = 5
    seed: int = 0
    max_iters: int = 2000
    lloyd_steps: int = 200
    lloyd_tol: float = 1e-9
    quad: Quadrature = field(default_factory=lambda: Quadrature("monte-carlo", 100_000, 0))
    threads: int = 1

    def __post_init__(self):
        if self.family not in ("riesz", "quantizer"):
            raise AsymptoticsError(f"unknown family {self.family!r}")
        if self.restarts < 1:
            raise AsymptoticsError("restarts must be at least 1")

    def riesz_spec(self, region: Region) -> RieszSpec:
        return RieszSpec(self.s, self.k, self.kappa, self.xi, region.intrinsic_dim)

    def quant_spec(self) -> QuantSpec:
        return QuantSpec(self.p, self.eta, self.xi, self.quad)


def theory_exponent(params: MinimizerParams, region: Region) -> float:
    """1 + s/d for Riesz energies, -p/d for quantization errors."""
    d = region.intrinsic_dim
    return 1.0 + params.s / d if params.family == "riesz" else -params.p / d


@dataclass
class MinimizerRun:
    config: PointConfig
    energy: float
    reason: str
    trace: list = field(default_factory=list)
    restart_energies: list = field(default_factory=list)


def family_energy(config: PointConfig, region: Region, params: MinimizerParams) -> float:
    if params.family == "riesz":
        return energy_knn(config, params.riesz_spec(region))
    return quant_energy(config, region, params.quant_spec())


def minimize_configuration(region: Region, n: int, params: MinimizerParams) -> MinimizerRun:
    """Best of ``params.restarts`` runs (ties: first seed).

    The first run starts from a quasi-uniform configuration, the others from
    uniform random samples. Quantizers on an interval are finished by
    :func:`newton_1d` after Lloyd.
    """
    if params.family == "riesz":
        spec = params.riesz_spec(region)
        spec.validate(region)
        warm, obj = riesz_stages(spec, region)
        opts = OptimizeOptions(
            max_iters=params.max_iters, restarts=params.restarts, seed=params.seed, threads=params.threads
        )
        res = minimize(obj, region.sample_quasi_uniform(n, params.seed), region, opts, warmup=warm)
        return MinimizerRun(res.config, res.energy, res.reason, res.trace, res.restart_energies)
    spec = params.quant_spec()
    spec.validate(region)
    best = None
    energies = []
    for r in range(params.restarts):
        pts = region.sample_quasi_uniform(n, params.seed) if r == 0 else region.sample_uniform(n, params.seed + r)
        start = PointConfig(pts, region.metric)
        out = lloyd(start, region, spec, params.lloyd_steps, params.lloyd_tol, params.seed + r)
        if region.kind == "box" and region.dim == 1:
            # Lloyd stalls on the slow global mode in 1D; finish with Newton.
            polished = newton_1d(out.config, region, spec)
            final = quant_energy(polished.config, region, spec)
            out = LloydResult(polished.config, out.energies + [final], polished.reason)
        energies.append(out.energies[-1])
        if best is None or out.energies[-1] < best.energies[-1]:
            best = out
    return MinimizerRun(best.config, best.energies[-1], best.reason, best.energies, energies)


def energy_series(region: Region, params: MinimizerParams, n_grid=DEFAULT_N_GRID) -> list[tuple[int, float]]:
    """Minimized energies over an N-grid (independent runs, optionally concurrent)."""
    grid = [int(v) for v in n_grid]
    if params.threads > 1:
        with ThreadPoolExecutor(max_workers=params.threads) as pool:
            runs = list(pool.map(lambda n: minimize_configuration(region, n, params), grid))
    else:
        runs = [minimize_configuration(region, n, params) for n in grid]
    return [(n, r.energy) for n, r in zip(grid, runs)]


def estimate_constant(region: Region, params: MinimizerParams, n_grid=DEFAULT_N_GRID) -> AsymptoticsFit:
    if len(n_grid) < 4:
        raise AsymptoticsError("the N-grid needs at least four values")
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise AsymptoticsError("the N-grid must be strictly increasing")
    return fit_rate(energy_series(region, params, n_grid), theory_exponent(params, region))


# -- short-range split probe ------------------------------------------------------------------


@dataclass
class SplitProbeRow:
    n: int
    ratio: float
    n_a: int
    n_b: int
    balance: float  # n_a / n
    expected_balance: float  # measure(A) / (measure(A) + measure(B))

    def to_json(self) -> dict:
        return dict(self.__dict__)


def shortrange_split_probe(region_a: Region, region_b: Region, params: MinimizerParams, n_grid) -> list[SplitProbeRow]:
    """Minimize on A u B, split the optimum along the components, compare energies.

    ratio = (e(w n A, A) + e(w n B, B)) / e(w, A u B), expected to approach 1.
    Monte Carlo quantizer energies are scored on a fresh draw (quadrature
    seed + 1): Lloyd fits the sites to its own samples, which biases the
    union energy low by a few percent at a few hundred samples per cell.
    """
    for r in (region_a, region_b):
        if r.kind != "box":
            raise AsymptoticsError("the split probe takes two boxes")
    union = box_union([(region_a.corners[0], region_a.sides[0]), (region_b.corners[0], region_b.sides[0])])
    lam_a, lam_b = region_a.measure(), region_b.measure()
    scoring = params
    if params.family == "quantizer" and params.quad.mode == "monte-carlo":
        scoring = replace(params, quad=replace(params.quad, seed=params.quad.seed + 1))
    rows = []
    for n in n_grid:
        run = minimize_configuration(union, int(n), params)
        pts = run.config.points
        in_a = np.asarray(region_a.contains(pts), dtype=bool)
        parts = [pts[in_a], pts[~in_a]]
        if min(len(p) for p in parts) <= (params.k if params.family == "riesz" else 0):
            raise AsymptoticsError("one component received too few points")
        split = sum(family_energy(PointConfig(p), reg, scoring) for p, reg in zip(parts, (region_a, region_b)))
        whole = family_energy(run.config, union, scoring)
        rows.append(SplitProbeRow(int(n), split / whole, int(in_a.sum()), int((~in_a).sum()), float(in_a.mean()), lam_a / (lam_a + lam_b)))
    return rows
