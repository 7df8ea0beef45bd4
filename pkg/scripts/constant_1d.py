"""Estimate the 1D Riesz constant from minimizers and compare with sum over |l|^-s."""

import argparse

from srint.asymptotics import DEFAULT_N_GRID, MinimizerParams, estimate_constant
from srint.regions import circle, unit_box
from srint.riesz import circle_constant


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--region", choices=["circle", "interval"], default="circle")
    ap.add_argument("--s", type=float, default=2.0)
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--restarts", type=int, default=1)
    args = ap.parse_args()
    region = circle() if args.region == "circle" else unit_box(1)
    fit = estimate_constant(region, MinimizerParams("riesz", s=args.s, k=args.k, restarts=args.restarts), DEFAULT_N_GRID)
    exact = circle_constant(args.s, args.k)
    print(f"slope {fit.exponent:.5f} (theory {fit.theory_exponent:g})")
    print(f"f1 estimate {fit.f1_estimate:.6f}, exact {exact:.6f}, relative error {fit.f1_estimate / exact - 1:+.3%}")


if __name__ == "__main__":
    main()
