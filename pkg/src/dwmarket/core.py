"""Shared types, hourly-vector helpers and profile metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_HORIZON = 24


class DomainError(ValueError):
    """Input outside an operation's domain (bad length, sign, shape...)."""


class InfeasibleDeviceError(DomainError):
    """A device specification admits no feasible plan."""


class SolverError(RuntimeError):
    """A numerical routine failed; ``diagnostics`` holds whatever it knew."""

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class ProtocolError(RuntimeError):
    """Coordinator/agent message exchange broke its contract."""


class InvariantError(RuntimeError):
    """An internal identity (e.g. energy conservation) was violated."""


def hourly(values, horizon: int | None = None, name: str = "vector") -> np.ndarray:
    """Return ``values`` as a read-only finite float vector, checking length."""
    arr = np.array(values, dtype=float, copy=True).reshape(-1)
    if horizon is not None and arr.shape[0] != horizon:
        raise DomainError(f"{name}: expected length {horizon}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name}: non-finite entries")
    arr.setflags(write=False)
    return arr


def same_length(*vectors: np.ndarray) -> int:
    lengths = {len(v) for v in vectors}
    if len(lengths) != 1:
        raise DomainError(f"length mismatch: {sorted(lengths)}")
    return lengths.pop()


@dataclass(frozen=True, eq=False)
class Bid:
    """A demand plan (kWh per hour) with the benefit ($) its owner attaches to it."""

    demand: np.ndarray
    benefit: float = 0.0
    # exact-sum partials per hour (and for the benefit) when the bid is itself a sum
    partials: tuple | None = None
    benefit_partials: tuple | None = None

    def __post_init__(self):
        demand = hourly(self.demand, name="bid demand")
        if np.any(demand < 0):
            raise DomainError("bid demand must be nonnegative")
        if not math.isfinite(self.benefit):
            raise DomainError("bid benefit must be finite")
        object.__setattr__(self, "demand", demand)
        object.__setattr__(self, "benefit", float(self.benefit))

    @property
    def horizon(self) -> int:
        return len(self.demand)

    def hour_terms(self) -> tuple:
        """Per-hour float terms whose exact sum is the demand."""
        if self.partials is not None:
            return self.partials
        return tuple((float(x),) for x in self.demand)

    def benefit_terms(self) -> tuple:
        if self.benefit_partials is not None:
            return self.benefit_partials
        return (self.benefit,)

    def value_at(self, prices) -> float:
        """Net value ``benefit - prices . demand`` of this bid at ``prices``."""
        p = hourly(prices, self.horizon, "prices")
        return self.benefit - float(p @ self.demand)

    def __eq__(self, other):
        if not isinstance(other, Bid):
            return NotImplemented
        return self.benefit == other.benefit and np.array_equal(self.demand, other.demand)

    __hash__ = None


@dataclass(frozen=True)
class MetricsRow:
    par_demand: float
    par_price: float
    std_demand: float
    std_price: float
    generation_cost: float
    user_payment: float


def par(v: Sequence[float]) -> float:
    """Peak-to-average ratio, ``max(v) / mean(v)``."""
    arr = hourly(v, name="par input")
    if arr.size == 0:
        raise DomainError("par of an empty vector")
    if np.any(arr < 0):
        raise DomainError("par requires nonnegative entries")
    total = math.fsum(arr)
    if total <= 0:
        raise DomainError("par requires a positive mean")
    # n*max and the exact sum round the same way, so a flat vector gives exactly 1
    return float(np.max(arr)) * arr.size / total


def std(v: Sequence[float]) -> float:
    """Population standard deviation."""
    arr = hourly(v, name="std input")
    if arr.size == 0:
        raise DomainError("std of an empty vector")
    return float(np.std(arr))


def user_payment(prices: Sequence[float], demand: Sequence[float]) -> float:
    p = hourly(prices, name="prices")
    d = hourly(demand, name="demand")
    same_length(p, d)
    return math.fsum(p * d)


def exact_partials(values: Iterable[float]) -> list[float]:
    """Non-overlapping float partials whose exact sum equals the sum of ``values``.

    Shewchuk's msum (the algorithm behind ``math.fsum``), exposed so that
    partial sums can be forwarded and combined later without rounding.
    """
    partials: list[float] = []
    for x in values:
        i = 0
        for y in partials:
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo:
                partials[i] = lo
                i += 1
            x = hi
        partials[i:] = [x]
    return partials
