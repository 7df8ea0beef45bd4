"""Minimize k-NN Riesz energies on the periodic circle and compare with equal spacing."""

import argparse
import time

import numpy as np

from srint.optimize import OptimizeOptions, minimize
from srint.regions import circle
from srint.riesz import RieszSpec, circle_optimal_energy, riesz_stages


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--s", type=float, nargs="+", default=[1.0, 2.0, 4.0])
    ap.add_argument("--k", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    print(f"{'N':>5} {'s':>4} {'k':>2} {'rel. energy error':>17} {'gap CV':>9} {'time':>6}")
    for n in args.n:
        for s in args.s:
            for k in args.k:
                t0 = time.perf_counter()
                warm, obj = riesz_stages(RieszSpec(s, k), circle())
                res = minimize(obj, circle().sample_uniform(n, args.seed), circle(), OptimizeOptions(), warmup=warm)
                x = np.sort(res.config.points[:, 0])
                gaps = np.diff(np.append(x, x[0] + 1.0))
                err = res.energy / circle_optimal_energy(n, s, k) - 1
                print(f"{n:5d} {s:4g} {k:2d} {err:17.2e} {gaps.std() / gaps.mean():9.2e} {time.perf_counter() - t0:5.1f}s")


if __name__ == "__main__":
    main()
