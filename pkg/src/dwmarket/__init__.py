"""Dantzig-Wolfe market coordination of price-responsive household devices."""

from dwmarket.core import (
    Bid,
    DomainError,
    InvariantError,
    MetricsRow,
    ProtocolError,
    SolverError,
    par,
    std,
    user_payment,
)

__version__ = "0.1.0"

__all__ = [
    "Bid",
    "DomainError",
    "InvariantError",
    "MetricsRow",
    "ProtocolError",
    "SolverError",
    "par",
    "std",
    "user_payment",
]
