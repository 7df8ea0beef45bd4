"""Log-log slopes of minimal energies on the unit square for both families."""

import argparse

from srint.asymptotics import DEFAULT_N_GRID, MinimizerParams, energy_series, fit_rate, theory_exponent
from srint.quantize import Quadrature
from srint.regions import unit_box


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--family", choices=["riesz", "quantizer"], default="riesz")
    ap.add_argument("--s", type=float, default=2.0)
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--p", type=float, default=2.0)
    ap.add_argument("--n-grid", type=int, nargs="+", default=list(DEFAULT_N_GRID))
    ap.add_argument("--quad-samples", type=int, default=200_000)
    args = ap.parse_args()
    square = unit_box(2)
    params = MinimizerParams(
        args.family, s=args.s, k=args.k, p=args.p, restarts=1, quad=Quadrature("grid", args.quad_samples, 0)
    )
    expo = theory_exponent(params, square)
    series = energy_series(square, params, args.n_grid)
    for n, e in series:
        print(f"N={n:5d}  E={e:.6e}  E/N^{expo:g}={e / n**expo:.6f}")
    fit = fit_rate(series, expo)
    print(f"fitted slope {fit.exponent:.4f}, theory {expo:g}")


if __name__ == "__main__":
    main()
