"""Why a 24-hour day needs more than 24 rounds.

The master represents the optimum as a convex combination of collected
aggregate bids. This script runs variants of the bundled day to convergence
and reports how many rounds each took and how many bids carry weight in the
final mix. Supports near H + 1 = 25 mean one new column per round cannot close
the gap within 24 rounds.

    python3 scripts/support_size.py
"""

import dataclasses

import numpy as np

from dwmarket.coordinator import run_dw
from dwmarket.devices import EvSpec, EwhSpec
from dwmarket.scenario import (DwSettings, Household, bundled_scenario_path, generate_scenario,
                               load_scenario)


def only(sc, kind):
    hh = tuple(Household(h.id, tuple(d for d in h.devices if isinstance(d[1], kind)))
               for h in sc.households)
    return dataclasses.replace(sc, households=hh)


def main():
    base = load_scenario(bundled_scenario_path())
    opt = run_dw(base, max_iters=200).final.prices
    variants = {
        "bundled": base,
        "zero initial prices": dataclasses.replace(base, dw=DwSettings(initial_price_rule="zero")),
        "start at optimal prices": dataclasses.replace(
            base, dw=DwSettings(initial_price_rule="explicit", initial_prices=tuple(opt))),
        "EVs only": only(base, EvSpec),
        "heaters only": only(base, EwhSpec),
        "one household": generate_scenario(1, 42),
    }
    variants.update({f"seed {s}": generate_scenario(8, s) for s in range(3)})
    print(f"{'variant':<26}{'rounds':>7}{'support':>9}")
    for name, sc in variants.items():
        res = run_dw(sc, max_iters=300)
        support = int(np.count_nonzero(res.final.weights))
        print(f"{name:<26}{len(res.records):>7}{support:>9}   {res.status}")


if __name__ == "__main__":
    main()
