"""Short-range split ratios on two separated components."""

import argparse

from srint.asymptotics import MinimizerParams, shortrange_split_probe
from srint.regions import box


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--family", choices=["riesz", "quantizer"], default="riesz")
    ap.add_argument("--n-grid", type=int, nargs="+", default=[128, 256, 512])
    args = ap.parse_args()
    if args.family == "riesz":
        a, b = box([0.0], 1.0), box([2.0], 1.0)
        params = MinimizerParams("riesz", s=2.0, k=1, restarts=1)
    else:
        a, b = box([0.0, 0.0], 1.0), box([2.0, 0.0], 1.0)
        params = MinimizerParams("quantizer", p=2.0, restarts=1)
    for row in shortrange_split_probe(a, b, params, args.n_grid):
        print(f"N={row.n:5d}  ratio {row.ratio:.5f}  split {row.n_a}/{row.n_b}")


if __name__ == "__main__":
    main()
