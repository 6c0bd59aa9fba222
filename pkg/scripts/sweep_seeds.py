"""Iterations needed to converge across generated scenarios.

Writes one CSV row per (households, seed): iterations to converge, final
support size, PAR before and after, and whether the equilibrium certificate
passes.

    python3 scripts/sweep_seeds.py --seeds 20 --households 1 4 8 -o sweep.csv
"""

import argparse
import csv
import sys

from dwmarket.core import par
from dwmarket.coordinator import run_dw
from dwmarket.oracle import nash_certificate
from dwmarket.scenario import generate_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--households", type=int, nargs="+", default=[8])
    ap.add_argument("--budget", type=int, default=200)
    ap.add_argument("-o", "--output", default="-")
    args = ap.parse_args()

    fh = sys.stdout if args.output == "-" else open(args.output, "w", newline="")
    out = csv.writer(fh, lineterminator="\n")
    out.writerow(["households", "seed", "status", "iterations", "support", "par_initial",
                  "par_final", "certificate"])
    for n in args.households:
        for seed in range(args.seeds):
            sc = generate_scenario(n, seed)
            res = run_dw(sc, max_iters=args.budget)
            cert = nash_certificate(res.allocation, sc)
            out.writerow([n, seed, res.status, len(res.records),
                          int((res.final.weights > 0).sum()),
                          f"{par(res.records[0].bid.demand):.4f}",
                          f"{par(res.final.constructed_demand):.4f}", cert.passed])
            fh.flush()
    if fh is not sys.stdout:
        fh.close()


if __name__ == "__main__":
    main()
