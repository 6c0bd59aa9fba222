"""Quadratic production cost ``C(D) = a * sum_h D_h**2`` and its marginal prices."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dwmarket.core import DomainError, hourly


@dataclass(frozen=True)
class SupplyModel:
    a: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and self.a > 0):
            raise DomainError(f"supply coefficient a must be positive, got {self.a}")


def _demand(D) -> np.ndarray:
    d = hourly(D, name="demand")
    if np.any(d < 0):
        raise DomainError("demand must be nonnegative")
    return d


def generation_cost(D, supply: SupplyModel) -> float:
    d = _demand(D)
    return supply.a * math.fsum(d * d)


def marginal_prices(D, supply: SupplyModel) -> np.ndarray:
    d = _demand(D)
    return hourly(2.0 * supply.a * d, name="prices")
