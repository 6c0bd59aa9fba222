"""The Dantzig-Wolfe coordination loop.

Each round: announce prices, collect every device's best response, sum them
into one aggregate bid, add it to the extreme-point set, re-solve the master
and price the next round at the master's marginal costs. The run ends when
the optimality gap closes, the aggregate bid repeats an existing point, or
the iteration budget is spent. Final plans are the master's weights applied
to each device's own bid history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dwmarket.core import Bid, DomainError, InvariantError, MetricsRow, ProtocolError, \
    exact_partials, par, std, user_payment
from dwmarket.master import ExtremePointSet, MasterSolution, optimality_gap, solve_master
from dwmarket.supply import generation_cost

CONVERGED = "converged"
ITERATION_LIMIT = "iteration-limit"
CONSERVATION_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class IterationRecord:
    iteration: int
    prices: np.ndarray  # announced this round
    bid: Bid  # aggregate response
    master: MasterSolution  # after adding the bid
    gap: float  # inf in round 0: no prior master to bound against
    s_best: float
    s_best_max: float
    accepted: bool  # False when the bid duplicated an existing extreme point
    metrics: MetricsRow


@dataclass(frozen=True, eq=False)
class Allocation:
    demand: dict  # device id -> plan
    benefit: dict  # device id -> weighted benefit
    prices: np.ndarray
    weights: np.ndarray

    def total(self, horizon: int) -> np.ndarray:
        out = np.zeros(horizon)
        for i in sorted(self.demand):
            out += self.demand[i]
        return out


@dataclass(frozen=True, eq=False)
class RunResult:
    records: list
    allocation: Allocation
    status: str
    gap_tol: float

    @property
    def final(self) -> MasterSolution:
        return self.records[-1].master


def initial_prices(scenario) -> np.ndarray:
    """Round-0 price vector according to the scenario's initializer."""
    H = scenario.horizon
    rule = scenario.dw.initial_price_rule
    if rule == "zero":
        return np.zeros(H)
    if rule == "explicit":
        return np.array(scenario.dw.initial_prices, dtype=float)
    if rule == "flat-average":
        total = math.fsum(spec.energy for _, spec in scenario.devices)
        return np.full(H, 2.0 * scenario.supply.a * total / H)
    raise DomainError(f"unknown initial price rule {rule!r}")


def aggregate_bids(bids) -> Bid:
    """System-wide bid: exact per-hour sums of the (device_id, Bid) pairs.

    Sums are correctly rounded (fsum over all leaf terms), so nesting
    aggregators in any grouping yields bit-identical totals.
    """
    ids = [i for i, _ in bids]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ProtocolError(f"duplicate bids from {dupes}")
    if not bids:
        raise DomainError("aggregate of no bids has no horizon; use an explicit zero bid")
    ordered = [b for _, b in sorted(bids, key=lambda item: item[0])]
    H = ordered[0].horizon
    if any(b.horizon != H for b in ordered):
        raise DomainError("bids disagree on horizon")
    partials = []
    for h in range(H):
        terms = [t for b in ordered for t in b.hour_terms()[h]]
        partials.append(tuple(exact_partials(terms)))
    benefit_partials = tuple(exact_partials(t for b in ordered for t in b.benefit_terms()))
    demand = np.array([math.fsum(p) for p in partials])
    return Bid(np.maximum(demand, 0.0), math.fsum(benefit_partials), tuple(partials),
               benefit_partials)


def disaggregate(weights, history: dict) -> Allocation:
    """Per-device plans ``d_j = sum_k w_k d_{j,k}`` from each device's bid history."""
    w = np.asarray(weights, dtype=float)
    demand, benefit = {}, {}
    for i in sorted(history):
        bids = history[i]
        if len(bids) < len(w):
            raise ProtocolError(f"device {i}: {len(bids)} bids on record, need {len(w)}")
        d = np.zeros(bids[0].horizon) if bids else np.zeros(0)
        for wk, bid in zip(w, bids):
            if wk != 0.0:
                d += wk * bid.demand
        demand[i] = d
        benefit[i] = math.fsum(wk * bid.benefit for wk, bid in zip(w, bids))
    return Allocation(demand, benefit, np.zeros(0), w)


def metrics_for(master: MasterSolution, supply) -> MetricsRow:
    D, p = master.constructed_demand, master.prices

    def safe(fn, v):
        try:
            return fn(v)
        except DomainError:
            return math.nan

    return MetricsRow(
        par_demand=safe(par, D),
        par_price=safe(par, p),
        std_demand=std(D),
        std_price=std(p),
        generation_cost=generation_cost(D, supply),
        user_payment=user_payment(p, D),
    )


def default_gap_tol(first_bid: Bid, supply) -> float:
    return 1e-6 * (1.0 + generation_cost(first_bid.demand, supply))


def run_dw(scenario, max_iters: int | None = None, gap_tol: float | None = None, hub=None,
           timeout: float = 30.0) -> RunResult:
    """Run the coordination loop on ``scenario``.

    ``hub`` is any transport exposing ``device_ids``, ``broadcast_prices``,
    ``collect_bids`` and ``send_final``; by default devices run in-process.
    """
    from dwmarket.transport import DeviceAgent, InProcessHub

    max_iters = scenario.dw.max_iters if max_iters is None else max_iters
    gap_tol = scenario.dw.gap_tol if gap_tol is None else gap_tol
    if max_iters < 1:
        raise DomainError("max_iters must be >= 1")

    own_hub = hub is None
    if own_hub:
        hub = InProcessHub([DeviceAgent(i, spec) for i, spec in scenario.devices],
                           horizon=scenario.horizon)
    try:
        return _iterate(scenario, hub, max_iters, gap_tol, timeout)
    finally:
        if own_hub:
            hub.close()


def _iterate(scenario, hub, max_iters, gap_tol, timeout) -> RunResult:
    supply = scenario.supply
    H = scenario.horizon
    ids = list(hub.device_ids)
    history: dict[str, list[Bid]] = {i: [] for i in ids}
    points = ExtremePointSet()
    records: list[IterationRecord] = []
    master = None
    s_best_max = -math.inf
    status = ITERATION_LIMIT
    prices = initial_prices(scenario)

    for k in range(max_iters):
        hub.broadcast_prices(k, prices)
        bids = hub.collect_bids(k, ids, timeout)
        agg = aggregate_bids(bids) if bids else Bid(np.zeros(H), 0.0)
        if agg.horizon != H:
            raise ProtocolError(f"aggregate bid horizon {agg.horizon} != {H}")
        if k == 0 and gap_tol is None:
            gap_tol = default_gap_tol(agg, supply)

        if master is None:
            # an empty market has a single feasible point, so round 0 is already optimal
            gap = 0.0 if not ids else math.inf
            s_best = -math.inf if ids else generation_cost(agg.demand, supply) - agg.benefit
        else:
            gap = optimality_gap(agg, master)
            s_best = master.objective - gap
        s_best_max = max(s_best_max, s_best)

        accepted = points.append(agg)
        if accepted:
            for i, bid in bids:
                history[i].append(bid)
            master = solve_master(points, supply,
                                  warm_start=None if master is None else master.weights)
        records.append(IterationRecord(k, np.array(prices), agg, master, gap, s_best,
                                       s_best_max, accepted, metrics_for(master, supply)))
        if not accepted or gap <= gap_tol:
            status = CONVERGED
            break
        prices = master.prices

    alloc = disaggregate(master.weights, history)
    alloc = Allocation(alloc.demand, alloc.benefit, master.prices, master.weights)
    total = alloc.total(H) if ids else np.zeros(H)
    err = float(np.max(np.abs(total - master.constructed_demand), initial=0.0))
    if err > CONSERVATION_TOL:
        raise InvariantError(f"device plans miss the master's demand by {err:.3g} kWh")
    hub.send_final(alloc.demand, master.prices, master.weights)
    return RunResult(records, alloc, status, gap_tol)
