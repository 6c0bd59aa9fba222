"""Independent checks for the coordination loop.

``joint_enumerate`` brute-forces the joint net-cost problem on a plan grid
(tiny instances only); ``nash_certificate`` re-solves every device at the
final prices and confirms none of them would rather deviate.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from dwmarket.core import Bid, DomainError
from dwmarket.devices import EvSpec, EwhSpec, best_response, ewh_benefit, ewh_plan, net_cost

MAX_PLANS = 10_000_000


class EnumerationTooLarge(DomainError):
    def __init__(self, count: int):
        self.count = count
        super().__init__(f"grid holds ~{count:.3g} joint plans, above the {MAX_PLANS:.0e} guard")


def _levels(cap: float, step: float) -> np.ndarray:
    n = int(math.floor(cap / step + 1e-9))
    levels = np.arange(n + 1) * step
    if cap - levels[-1] > 1e-12:
        levels = np.append(levels, cap)
    return levels


def ev_plans(spec: EvSpec, step: float) -> np.ndarray:
    """Grid plans charging exactly ``e_des``.

    One available hour absorbs the remainder while the others take grid
    values, so the energy equality holds exactly. Every available hour takes
    a turn as the absorbing hour; duplicates are dropped.
    """
    H = spec.horizon
    e_max = np.asarray(spec.e_max)
    avail = np.flatnonzero(e_max > 0)
    if avail.size == 0:
        if spec.e_des > 0:
            raise DomainError("EV has no charging hours")
        return np.zeros((1, H))
    plans = set()
    for free in avail:
        grids = [_levels(e_max[h], step) if h != free else np.zeros(1) for h in range(H)]
        for combo in itertools.product(*grids):
            last = spec.e_des - math.fsum(combo)
            if -1e-12 <= last <= e_max[free] + 1e-12:
                plan = list(combo)
                plan[free] = min(max(last, 0.0), e_max[free])
                plans.add(tuple(plan))
    if not plans:
        raise DomainError(f"no grid plan at step {step} delivers {spec.e_des} kWh")
    return np.array(sorted(plans), dtype=float)


def ewh_plans(spec: EwhSpec, step: float) -> tuple[np.ndarray, np.ndarray]:
    levels = _levels(spec.e_max, step)
    plans = np.array(list(itertools.product(levels, repeat=spec.horizon)), dtype=float)
    plans = plans.reshape(-1, spec.horizon)
    benefits = np.array([ewh_benefit(ewh_plan(e, spec), spec) for e in plans])
    return plans, benefits


def device_grid(spec, step: float) -> tuple[np.ndarray, np.ndarray]:
    """Lexicographically sorted plans with their benefits."""
    if isinstance(spec, EvSpec):
        plans = ev_plans(spec, step)
        benefits = np.zeros(len(plans))
    elif isinstance(spec, EwhSpec):
        plans, benefits = ewh_plans(spec, step)
    else:
        raise DomainError(f"unknown device spec {type(spec).__name__}")
    order = np.lexsort(plans.T[::-1])
    return plans[order], benefits[order]


def grid_size(scenario, step: float) -> int:
    """Joint plan count, estimated from per-hour grid sizes without enumerating."""
    total = 1
    for _, spec in scenario.devices:
        if isinstance(spec, EvSpec):
            caps = [c for c in spec.e_max if c > 0]
            # each absorbing hour contributes at most the product over the others
            total *= max(1, sum(math.prod(len(_levels(c, step)) for j, c in enumerate(caps) if j != i)
                                for i in range(len(caps))))
        else:
            total *= len(_levels(spec.e_max, step)) ** spec.horizon
    return total


@dataclass(frozen=True, eq=False)
class EnumerationResult:
    demand: np.ndarray
    net_cost: float
    plans: dict  # device id -> plan


def joint_enumerate(scenario, step: float = 0.25) -> EnumerationResult:
    """Minimize C(sum_j d_j) - sum_j b_j over the Cartesian product of grid plans."""
    if step <= 0:
        raise DomainError("grid step must be positive")
    H = scenario.horizon
    devices = scenario.devices
    if not devices:
        return EnumerationResult(np.zeros(H), 0.0, {})
    estimate = grid_size(scenario, step)
    if estimate > MAX_PLANS:
        raise EnumerationTooLarge(estimate)
    grids = [device_grid(spec, step) for _, spec in devices]
    a = scenario.supply.a

    *head, (last_plans, last_benefits) = grids
    best = (math.inf, None)
    # outer devices by itertools (lexicographic), innermost device vectorized
    for combo in itertools.product(*[range(len(p)) for p, _ in head]):
        base = np.zeros(H)
        base_benefit = 0.0
        for (plans, benefits), idx in zip(head, combo):
            base = base + plans[idx]
            base_benefit += benefits[idx]
        D = base[None, :] + last_plans
        cost = a * np.einsum("ij,ij->i", D, D) - (base_benefit + last_benefits)
        j = int(np.argmin(cost))
        if cost[j] < best[0]:
            best = (float(cost[j]), (*combo, j))
    value, choice = best
    plans = {i: grids[n][0][choice[n]] for n, (i, _) in enumerate(devices)}
    demand = np.sum(list(plans.values()), axis=0)
    return EnumerationResult(demand, value, plans)


def discretization_bound(scenario, step: float) -> float:
    """a * H * step * (largest possible hourly aggregate demand)."""
    peak = np.zeros(scenario.horizon)
    for _, spec in scenario.devices:
        peak += np.asarray(spec.e_max) if isinstance(spec, EvSpec) else spec.e_max
    return scenario.supply.a * scenario.horizon * step * float(np.max(peak, initial=0.0))


# ---------------------------------------------------------------- certificate


@dataclass(frozen=True)
class DeviceCheck:
    device_id: str
    allocated: float  # p*.d_j - b_j at the allocation
    best: float  # same objective at a fresh best response
    improvement: float  # allocated - best


@dataclass(frozen=True)
class CertificateReport:
    passed: bool
    eps: float
    price_error: float
    devices: tuple = field(default_factory=tuple)
    failures: tuple = field(default_factory=tuple)

    def __str__(self):
        head = "PASS" if self.passed else "FAIL"
        lines = [f"Nash certificate {head} (eps={self.eps:g}, price error {self.price_error:.3g})"]
        lines += [f"  {f}" for f in self.failures]
        return "\n".join(lines)


def nash_certificate(allocation, scenario, eps: float = 1e-5,
                     price_tol: float = 1e-9) -> CertificateReport:
    """Check that no device gains more than ``eps * (1 + |objective|)`` by re-optimizing."""
    p = np.asarray(allocation.prices, dtype=float)
    H = scenario.horizon
    total = np.zeros(H)
    for i in sorted(allocation.demand):
        total += allocation.demand[i]
    price_error = float(np.max(np.abs(p - 2.0 * scenario.supply.a * total), initial=0.0)) \
        if len(p) else 0.0
    checks, failures = [], []
    if price_error > price_tol:
        failures.append(f"prices differ from marginal cost of allocated demand by {price_error:.3g}")
    for device_id, spec in scenario.devices:
        if device_id not in allocation.demand:
            failures.append(f"{device_id}: no allocation")
            continue
        mine = Bid(np.maximum(allocation.demand[device_id], 0.0), allocation.benefit[device_id])
        allocated = net_cost(p, mine)
        best = net_cost(p, best_response(p, spec))
        check = DeviceCheck(device_id, allocated, best, allocated - best)
        checks.append(check)
        if check.improvement > eps * (1.0 + abs(allocated)):
            failures.append(f"{device_id}: could improve by {check.improvement:.3g} "
                            f"({allocated:.6g} -> {best:.6g})")
    return CertificateReport(not failures, eps, price_error, tuple(checks), tuple(failures))
