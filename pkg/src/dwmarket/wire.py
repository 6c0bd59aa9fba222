"""Newline-delimited JSON messages exchanged between coordinator and agents.

Every message is one UTF-8 line holding a JSON object with ``"v": 1`` and a
``"type"`` discriminator. Floats are printed with 17 significant digits so a
parse/print round trip reproduces the exact double.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Union

from dwmarket.core import ProtocolError

VERSION = 1


@dataclass(frozen=True)
class Register:
    device_id: str
    horizon: int


@dataclass(frozen=True)
class PriceAnnounce:
    iteration: int
    prices: tuple


@dataclass(frozen=True)
class BidSubmit:
    iteration: int
    device_id: str
    demand: tuple
    benefit: float
    # exact partial sums, present only when the sender aggregated several bids
    partials: tuple | None = None
    benefit_partials: tuple | None = None


@dataclass(frozen=True)
class FinalAllocate:
    device_id: str
    demand: tuple
    prices: tuple
    # master weights, sent to aggregators so they can split among their children
    weights: tuple | None = None


@dataclass(frozen=True)
class Shutdown:
    reason: str = field(default="")


Message = Union[Register, PriceAnnounce, BidSubmit, FinalAllocate, Shutdown]

_TYPES = {
    "register": Register,
    "price": PriceAnnounce,
    "bid": BidSubmit,
    "final": FinalAllocate,
    "shutdown": Shutdown,
}
_NAMES = {cls: name for name, cls in _TYPES.items()}


def _num(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ProtocolError(f"cannot send non-finite number {x!r}")
    return format(x, ".17g")


def _vec(values) -> str:
    return "[" + ",".join(_num(v) for v in values) + "]"


def _nested(rows) -> str:
    return "[" + ",".join(_vec(r) for r in rows) + "]"


def encode(msg: Message) -> str:
    """One JSON line (no trailing newline)."""
    name = _NAMES.get(type(msg))
    if name is None:
        raise ProtocolError(f"not a message: {msg!r}")
    parts = [f'"v":{VERSION}', f'"type":"{name}"']
    if isinstance(msg, Register):
        parts += [f'"device_id":{json.dumps(msg.device_id)}', f'"horizon":{int(msg.horizon)}']
    elif isinstance(msg, PriceAnnounce):
        parts += [f'"iteration":{int(msg.iteration)}', f'"prices":{_vec(msg.prices)}']
    elif isinstance(msg, BidSubmit):
        parts += [f'"iteration":{int(msg.iteration)}', f'"device_id":{json.dumps(msg.device_id)}',
                  f'"demand":{_vec(msg.demand)}', f'"benefit":{_num(msg.benefit)}']
        if msg.partials is not None:
            parts.append(f'"partials":{_nested(msg.partials)}')
        if msg.benefit_partials is not None:
            parts.append(f'"benefit_partials":{_vec(msg.benefit_partials)}')
    elif isinstance(msg, FinalAllocate):
        parts += [f'"device_id":{json.dumps(msg.device_id)}', f'"demand":{_vec(msg.demand)}',
                  f'"prices":{_vec(msg.prices)}']
        if msg.weights is not None:
            parts.append(f'"weights":{_vec(msg.weights)}')
    elif isinstance(msg, Shutdown):
        parts.append(f'"reason":{json.dumps(msg.reason)}')
    return "{" + ",".join(parts) + "}"


def _floats(obj, what: str) -> tuple:
    if not isinstance(obj, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                            for v in obj):
        raise ProtocolError(f"{what}: expected a list of numbers")
    out = tuple(float(v) for v in obj)
    if not all(math.isfinite(v) for v in out):
        raise ProtocolError(f"{what}: non-finite number")
    return out


def _get(obj: dict, key: str, kind, what: str):
    if key not in obj:
        raise ProtocolError(f"{what}: missing field {key!r}")
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ProtocolError(f"{what}.{key}: expected a number")
        if not math.isfinite(value):
            raise ProtocolError(f"{what}.{key}: non-finite number")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ProtocolError(f"{what}.{key}: expected an integer")
        return value
    if not isinstance(value, kind):
        raise ProtocolError(f"{what}.{key}: expected {kind.__name__}")
    return value


def decode(line: str | bytes) -> Message:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"message is not UTF-8: {exc}") from None
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed message: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("message must be a JSON object")
    if obj.get("v") != VERSION:
        raise ProtocolError(f"unsupported message version {obj.get('v')!r}")
    name = obj.get("type")
    if name not in _TYPES:
        raise ProtocolError(f"unknown message type {name!r}")
    if name == "register":
        return Register(_get(obj, "device_id", str, name), _get(obj, "horizon", int, name))
    if name == "price":
        return PriceAnnounce(_get(obj, "iteration", int, name),
                             _floats(_get(obj, "prices", list, name), "prices"))
    if name == "bid":
        partials = obj.get("partials")
        if partials is not None:
            if not isinstance(partials, list):
                raise ProtocolError("bid.partials: expected a list")
            partials = tuple(_floats(row, "partials") for row in partials)
        bp = obj.get("benefit_partials")
        return BidSubmit(
            _get(obj, "iteration", int, name),
            _get(obj, "device_id", str, name),
            _floats(_get(obj, "demand", list, name), "demand"),
            _get(obj, "benefit", float, name),
            partials,
            None if bp is None else _floats(bp, "benefit_partials"),
        )
    if name == "final":
        weights = obj.get("weights")
        return FinalAllocate(
            _get(obj, "device_id", str, name),
            _floats(_get(obj, "demand", list, name), "demand"),
            _floats(_get(obj, "prices", list, name), "prices"),
            None if weights is None else _floats(weights, "weights"),
        )
    return Shutdown(str(obj.get("reason", "")))
