"""Compare minimizers with the predicted limiting density on [0, 1]."""

import argparse

from srint.asymptotics import MinimizerParams, minimize_configuration
from srint.density import DensityModel, compare_density, solve_l1
from srint.expr import parse
from srint.regions import unit_box


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--restarts", type=int, default=5)
    ap.add_argument("--kappa", default="1 + (x0 + y0) / 2")
    ap.add_argument("--eta", default="1 + x0")
    args = ap.parse_args()
    interval = unit_box(1)
    kappa, eta = parse(args.kappa), parse(args.eta)
    riesz = minimize_configuration(interval, args.n, MinimizerParams("riesz", s=2.0, k=2, kappa=kappa, restarts=args.restarts))
    model = solve_l1(DensityModel.riesz(2.0, interval, kappa=kappa))
    print(f"riesz s=2 k=2 kappa={args.kappa}: KS {compare_density(riesz.config, model).divergence:.4f}")
    quant = minimize_configuration(interval, args.n, MinimizerParams("quantizer", p=2.0, eta=eta, restarts=args.restarts))
    model = solve_l1(DensityModel.quantizer(2.0, interval, eta=eta))
    print(f"quantizer p=2 eta={args.eta}: KS {compare_density(quant.config, model).divergence:.4f}")


if __name__ == "__main__":
    main()
