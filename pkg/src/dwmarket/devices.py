"""Price-responsive devices: EV charging and electric water heaters.

Each device maps an hourly price vector to its cost-minimizing plan and
reports it as a :class:`~dwmarket.core.Bid`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from dwmarket.core import Bid, DomainError, InfeasibleDeviceError, SolverError, hourly
from dwmarket.lp import GE, LinearProgram, solve_lp


def _vec(values) -> tuple:
    return tuple(float(v) for v in np.asarray(values, dtype=float).reshape(-1))


@dataclass(frozen=True)
class EvSpec:
    """Charging window as per-hour charge caps (0 = car away) plus the energy to deliver."""

    e_max: tuple
    e_des: float

    def __post_init__(self):
        object.__setattr__(self, "e_max", _vec(self.e_max))
        object.__setattr__(self, "e_des", float(self.e_des))
        problems = self.problems()
        if problems:
            raise DomainError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not all(math.isfinite(v) for v in self.e_max):
            out.append("e_max: non-finite entries")
        elif any(v < 0 for v in self.e_max):
            out.append("e_max: entries must be >= 0")
        if not math.isfinite(self.e_des) or self.e_des < 0:
            out.append("e_des: must be finite and >= 0")
        elif self.e_des > math.fsum(self.e_max) * (1 + 1e-12):
            out.append(f"e_des: {self.e_des} exceeds total window capacity {math.fsum(self.e_max)}")
        return out

    @property
    def horizon(self) -> int:
        return len(self.e_max)

    @property
    def energy(self) -> float:
        return self.e_des


@dataclass(frozen=True)
class EwhSpec:
    """Single-node tank model with a linear shortfall penalty."""

    c_tank: float  # kWh/degC
    r_loss: float  # 1/h
    e_max: float  # kWh/h
    t_min: float  # degC
    t_in: tuple  # degC, per hour
    t_amb: tuple  # degC, per hour
    draw: tuple  # kWh withdrawn per hour
    p_short: float  # $/kWh
    t0: float | None = None  # degC; defaults to t_min

    def __post_init__(self):
        for name in ("t_in", "t_amb", "draw"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        for name in ("c_tank", "r_loss", "e_max", "t_min", "p_short"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "t0", self.t_min if self.t0 is None else float(self.t0))
        problems = self.problems()
        if problems:
            raise DomainError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        scalars = ("c_tank", "r_loss", "e_max", "t_min", "p_short", "t0")
        for name in scalars:
            if not math.isfinite(getattr(self, name)):
                out.append(f"{name}: must be finite")
        for name in ("t_in", "t_amb", "draw"):
            if not all(math.isfinite(v) for v in getattr(self, name)):
                out.append(f"{name}: non-finite entries")
        if out:
            return out
        H = len(self.draw)
        for name in ("t_in", "t_amb"):
            if len(getattr(self, name)) != H:
                out.append(f"{name}: length {len(getattr(self, name))} != draw length {H}")
        if self.c_tank <= 0:
            out.append("c_tank: must be > 0")
        if not 0 <= self.r_loss < 1:
            out.append("r_loss: must lie in [0, 1)")
        if self.e_max < 0:
            out.append("e_max: must be >= 0")
        if self.p_short < 0:
            out.append("p_short: must be >= 0")
        if any(v < 0 for v in self.draw):
            out.append("draw: entries must be >= 0")
        if self.t_in and self.t_min <= max(self.t_in):
            out.append(f"t_min: must exceed every inlet temperature (max t_in = {max(self.t_in)})")
        return out

    @property
    def horizon(self) -> int:
        return len(self.draw)

    @property
    def energy(self) -> float:
        return math.fsum(self.draw)


DeviceSpec = Union[EvSpec, EwhSpec]


@dataclass(frozen=True, eq=False)
class EwhPlan:
    e_in: np.ndarray
    t_tank: np.ndarray
    t_short: np.ndarray
    e_short: np.ndarray


# ---------------------------------------------------------------- EV


def ev_best_response(prices, spec: EvSpec) -> Bid:
    """Cheapest full charge: fill available hours in (price, hour) order."""
    p = hourly(prices, spec.horizon, "prices")
    e_max = np.asarray(spec.e_max)
    if spec.e_des > math.fsum(e_max) * (1 + 1e-12):
        raise InfeasibleDeviceError(
            f"EV needs {spec.e_des} kWh but its window only holds {math.fsum(e_max)} kWh")
    hours = np.flatnonzero(e_max > 0)
    order = hours[np.lexsort((hours, p[hours]))]
    d = np.zeros(spec.horizon)
    remaining = spec.e_des
    for h in order:
        if remaining <= 0:
            break
        take = min(e_max[h], remaining)
        d[h] = take
        remaining -= take
    return Bid(d, 0.0)


def ev_lp(prices, spec: EvSpec) -> LinearProgram:
    """The charging problem as an LP (used to cross-check the greedy)."""
    H = spec.horizon
    return LinearProgram(c=hourly(prices, H, "prices"), A=np.ones((1, H)), b=[spec.e_des],
                         relations=["="], lb=np.zeros(H), ub=np.asarray(spec.e_max))


# ---------------------------------------------------------------- EWH


def _tank_affine(spec: EwhSpec):
    """Tank temperature as ``base + G @ e_in`` from the forward recursion."""
    H = spec.horizon
    q = 1.0 - spec.r_loss
    t_amb = np.asarray(spec.t_amb)
    draw = np.asarray(spec.draw)
    base = np.empty(H)
    prev = spec.t0
    for h in range(H):
        prev = q * prev + spec.r_loss * t_amb[h] - draw[h] / spec.c_tank
        base[h] = prev
    idx = np.arange(H)
    lag = idx[:, None] - idx[None, :]
    G = np.where(lag >= 0, q ** np.maximum(lag, 0), 0.0) / spec.c_tank
    return base, G


def tank_temperatures(e_in, spec: EwhSpec) -> np.ndarray:
    """T_h = T_{h-1} + (E_in_h - draw_h)/c_tank - r_loss*(T_{h-1} - t_amb_h), T_{-1} = t0."""
    e = hourly(e_in, spec.horizon, "e_in")
    T = np.empty(spec.horizon)
    prev = spec.t0
    for h in range(spec.horizon):
        prev = prev + (e[h] - spec.draw[h]) / spec.c_tank - spec.r_loss * (prev - spec.t_amb[h])
        T[h] = prev
    return T


def ewh_plan(e_in, spec: EwhSpec) -> EwhPlan:
    """Complete operating plan implied by a heating schedule (minimal shortfall)."""
    e = hourly(e_in, spec.horizon, "e_in")
    T = tank_temperatures(e, spec)
    t_short = np.maximum(0.0, spec.t_min - T)
    e_short = np.asarray(spec.draw) * t_short / (spec.t_min - np.asarray(spec.t_in))
    return EwhPlan(e, hourly(T), hourly(t_short), hourly(e_short))


def ewh_benefit(plan: EwhPlan, spec: EwhSpec) -> float:
    """Willingness to pay for the hot water actually delivered."""
    return spec.p_short * math.fsum(np.asarray(spec.draw) - plan.e_short)


def ewh_lp(prices, spec: EwhSpec) -> LinearProgram:
    """LP over ``[e_in, t_short]`` with the tank temperature substituted out."""
    H = spec.horizon
    p = hourly(prices, H, "prices")
    base, G = _tank_affine(spec)
    short_cost = spec.p_short * np.asarray(spec.draw) / (spec.t_min - np.asarray(spec.t_in))
    # t_short_h + T_h >= t_min with T = base + G e_in
    A = np.hstack([G, np.eye(H)])
    b = spec.t_min - base
    lb = np.zeros(2 * H)
    ub = np.concatenate([np.full(H, spec.e_max), np.full(H, np.inf)])
    return LinearProgram(c=np.concatenate([p, short_cost]), A=A, b=b, relations=[GE] * H,
                         lb=lb, ub=ub)


def ewh_best_response(prices, spec: EwhSpec) -> tuple[Bid, EwhPlan]:
    sol = solve_lp(ewh_lp(prices, spec))
    if sol.status != "optimal":
        raise SolverError(f"water-heater LP ended {sol.status}", **sol.diagnostics)
    e_in = np.clip(sol.x[:spec.horizon], 0.0, spec.e_max)
    plan = ewh_plan(e_in, spec)
    return Bid(plan.e_in, ewh_benefit(plan, spec)), plan


# ---------------------------------------------------------------- dispatch


def best_response(prices, spec: DeviceSpec) -> Bid:
    if isinstance(spec, EvSpec):
        return ev_best_response(prices, spec)
    if isinstance(spec, EwhSpec):
        return ewh_best_response(prices, spec)[0]
    raise DomainError(f"unknown device spec {type(spec).__name__}")


def net_cost(prices, bid: Bid) -> float:
    """A device's subproblem objective: payment minus benefit."""
    return -bid.value_at(prices)


def plan_violations(spec: DeviceSpec, demand, tol: float = 1e-9) -> list[str]:
    """Constraint violations of ``demand`` for this device (empty when feasible)."""
    d = hourly(demand, spec.horizon, "demand")
    out = []
    if isinstance(spec, EvSpec):
        e_max = np.asarray(spec.e_max)
        for h in np.flatnonzero(d < -tol):
            out.append(f"hour {h}: negative charge {d[h]}")
        for h in np.flatnonzero(d > e_max + tol):
            out.append(f"hour {h}: charge {d[h]} above cap {e_max[h]}")
        total = math.fsum(d)
        if abs(total - spec.e_des) > tol * max(1.0, spec.e_des):
            out.append(f"delivered {total} kWh, needs {spec.e_des}")
    elif isinstance(spec, EwhSpec):
        for h in np.flatnonzero(d < -tol):
            out.append(f"hour {h}: negative heating {d[h]}")
        for h in np.flatnonzero(d > spec.e_max + tol):
            out.append(f"hour {h}: heating {d[h]} above element capacity {spec.e_max}")
    else:
        raise DomainError(f"unknown device spec {type(spec).__name__}")
    return out
