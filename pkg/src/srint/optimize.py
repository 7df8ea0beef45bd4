"""Projected first-order descent (or ascent) with Armijo backtracking and restarts."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol

import numpy as np

from .config import PointConfig
from .regions import Region


class OptimizeError(RuntimeError):
    pass


class Objective(Protocol):
    def value(self, points: np.ndarray) -> float: ...

    def value_and_grad(self, points: np.ndarray) -> tuple[float, np.ndarray]: ...


@dataclass(frozen=True)
class OptimizeOptions:
    mode: str = "minimize"
    max_iters: int = 2000
    step0: float | None = None  # largest single-point move; default 0.1 N^{-1/d} diam(A)
    backtrack: float = 0.5
    max_halvings: int = 30
    armijo: float = 1e-4
    tol_grad: float = 1e-10  # projected gradient x spacing / (energy per point)
    tol_energy: float = 1e-13  # relative improvement, sustained over `patience` steps
    patience: int = 20
    restarts: int = 1
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.mode not in ("minimize", "maximize"):
            raise OptimizeError(f"unknown mode {self.mode!r}")
        if self.step0 is not None and not self.step0 > 0:
            raise OptimizeError("step0 must be positive")
        if not (self.tol_grad > 0 and self.tol_energy > 0):
            raise OptimizeError("tolerances must be positive")
        if self.restarts < 1:
            raise OptimizeError("restarts must be at least 1")


@dataclass
class TraceRow:
    iter: int
    energy: float
    grad_norm: float
    step: float


@dataclass
class OptimizeResult:
    config: PointConfig
    energy: float
    trace: list[TraceRow]
    reason: str
    restart_energies: list[float] = field(default_factory=list)
    best_restart: int = 0


def default_step(region: Region, n: int) -> float:
    return 0.1 * n ** (-1.0 / region.intrinsic_dim) * region.diameter


def _wrap_delta(region: Region, delta: np.ndarray) -> np.ndarray:
    if region.metric == "circle-periodic":
        return delta - np.round(delta)
    return delta


def _escape_singularity(objective, x, region, step, rng, attempts):
    for _ in range(attempts):
        trial = region.project(x + step * rng.standard_normal(x.shape))
        if math.isfinite(objective.value(trial)):
            return trial
    raise OptimizeError("stuck at singularity: energy is infinite at the start and at every probe step")


def _next_step(delta, dg, t, halving, cap, gmax_new):
    """Trial move for the next iteration.

    Barzilai-Borwein estimate |s|^2 / <s, y> (scaled to the largest single-point
    move) when the curvature along the last step is positive; otherwise double
    after an unhalved step and keep the accepted length after a halved one.
    """
    sy = float(np.sum(delta * dg))
    if sy > 0 and gmax_new > 0:
        bb = float(np.sum(delta * delta)) / sy * gmax_new
        if math.isfinite(bb) and bb > 0:
            return min(cap, bb)
    return min(cap, t * 2.0) if halving == 0 else t


def _descend(objective: Objective, start: np.ndarray, region: Region, opts: OptimizeOptions, seed: int) -> OptimizeResult:
    sign = 1.0 if opts.mode == "minimize" else -1.0
    x = region.project(np.asarray(start, dtype=float))
    n = len(x)
    step = opts.step0 if opts.step0 is not None else default_step(region, n)
    cap = region.diameter
    f = objective.value(x)
    if not math.isfinite(f):
        x = _escape_singularity(objective, x, region, step, np.random.default_rng(seed), opts.max_halvings)
    f, g = objective.value_and_grad(x)
    trace = [TraceRow(0, f, math.nan, step)]
    reason = "max-iters"
    spacing = n ** (-1.0 / region.intrinsic_dim) * region.diameter
    stalled = 0
    for it in range(1, opts.max_iters + 1):
        gmax = float(np.max(np.abs(g)))
        if gmax == 0.0:
            reason = "grad-tol"
            trace[-1].grad_norm = 0.0
            break
        direction = -sign * g / gmax
        # Projected-gradient norm at the current step length.
        pg = _wrap_delta(region, region.project(x + step * direction) - x)
        gnorm = float(np.max(np.abs(pg))) / step * gmax
        trace[-1].grad_norm = gnorm
        if gnorm * spacing <= opts.tol_grad * abs(f) / n:
            reason = "grad-tol"
            break
        accepted = False
        t = step
        for halving in range(opts.max_halvings + 1):
            trial = region.project(x + t * direction)
            delta = _wrap_delta(region, trial - x)
            f_new = objective.value(trial)
            decrease = -sign * float(np.sum(g * delta))
            if math.isfinite(f_new) and sign * (f - f_new) >= opts.armijo * decrease and sign * (f - f_new) > 0:
                accepted = True
                break
            t *= opts.backtrack
        if not accepted:
            reason = "energy-tol"
            break
        rel = abs(f - f_new) / max(abs(f), 1e-300)
        x = trial
        g_old = g
        f, g = objective.value_and_grad(x)
        step = _next_step(delta, g - g_old, t, halving, cap, float(np.max(np.abs(g))))
        trace.append(TraceRow(it, f, math.nan, t))
        stalled = stalled + 1 if rel < opts.tol_energy else 0
        if stalled >= opts.patience:
            reason = "energy-tol"
            break
    cfg = PointConfig(x, region.metric)
    return OptimizeResult(cfg, f, trace, reason)


def _trajectory(objective, warmup, start, region, opts, seed):
    # Warm-up stages only need to land in the right basin.
    loose = replace(
        opts,
        tol_grad=max(opts.tol_grad, 1e-6),
        tol_energy=max(opts.tol_energy, 1e-9),
        max_iters=opts.max_iters,
    )
    x = start
    for stage in warmup:
        x = _descend(stage, x, region, loose, seed).config.points
    return _descend(objective, x, region, opts, seed)


def minimize(
    objective: Objective, start, region: Region, opts: OptimizeOptions = OptimizeOptions(), warmup: tuple = ()
) -> OptimizeResult:
    """Optimize ``objective`` over configurations inside ``region``.

    The first trajectory starts from ``start``; further restarts start from
    uniform samples with seeds ``opts.seed + r``. Each trajectory first runs
    through the ``warmup`` objectives (e.g. smoothed versions of a piecewise
    smooth energy) and ends on ``objective``; only that last stage is traced.
    The best final energy (in the direction of ``opts.mode``) wins, ties going
    to the earliest restart.
    """
    if isinstance(start, PointConfig):
        start = start.points
    start = np.asarray(start, dtype=float)
    if start.ndim == 1:
        start = start[:, None]
    n = len(start)
    starts = [start] + [region.sample_uniform(n, opts.seed + r) for r in range(1, opts.restarts)]
    seeds = [opts.seed + r for r in range(opts.restarts)]
    if opts.threads > 1 and opts.restarts > 1:
        with ThreadPoolExecutor(max_workers=opts.threads) as pool:
            results = list(pool.map(lambda a: _trajectory(objective, warmup, a[0], region, opts, a[1]), zip(starts, seeds)))
    else:
        results = [_trajectory(objective, warmup, s, region, opts, sd) for s, sd in zip(starts, seeds)]
    sign = 1.0 if opts.mode == "minimize" else -1.0
    best = min(range(len(results)), key=lambda r: (sign * results[r].energy, r))
    out = results[best]
    out.restart_energies = [r.energy for r in results]
    out.best_restart = best
    return out


def write_trace(trace: list[TraceRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "energy", "grad_norm", "step"])
        for row in trace:
            w.writerow([row.iter, f"{row.energy:.17g}", f"{row.grad_norm:.17g}", f"{row.step:.17g}"])
