"""Search for a decreasing speed curve of the two-point law in d=2.

    python3 scripts/nonmono_search.py --cells 0.92:1e-8 0.8:1e-6 --lambdas 0.5:4:8

Each cell p:kappa gets a speed curve on shared seeds; pairs lambda1 < lambda2
with v(lambda1) - v(lambda2) above 3 paired standard errors are listed.
"""
import argparse

import numpy as np

from rcwalk.cli import flag_decreases, parse_grid
from rcwalk.env import EnvironmentLaw
from rcwalk.estimate import velocity_curve


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cells", nargs="+", default=["0.92:1e-2", "0.92:1e-4", "0.92:1e-8", "0.8:1e-6"])
    ap.add_argument("--lambdas", default="0.5:4:8")
    ap.add_argument("--horizon", type=int, default=100_000)
    ap.add_argument("--replicas", type=int, default=100)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    lams = parse_grid(args.lambdas)
    for cell in args.cells:
        p, kap = (float(s) for s in cell.split(":"))
        mean, se, per = velocity_curve(EnvironmentLaw.two_point(p, kap), lams, args.horizon,
                                       args.replicas, args.seed)
        row = " ".join(f"{m:.3f}({s:.3f})" for m, s in zip(mean, se))
        flags = flag_decreases(lams, per)
        print(f"p={p:g} kappa={kap:g}: {row}")
        for f in flags[:5]:
            print(f"   drop {f['lambda1']:g} -> {f['lambda2']:g}: {f['drop']:.4f} +- {f['stderr']:.4f}")
        if not flags:
            print("   no significant decrease")


if __name__ == "__main__":
    main()
