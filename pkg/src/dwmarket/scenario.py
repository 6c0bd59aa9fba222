"""Scenario files: loading, validation, defaults and random generation.

The on-disk format is JSON; ``data/scenario.schema.json`` is the formal
schema. Structural problems are found by the schema, model invariants by the
device constructors; every problem is reported with a locator such as
``households[3].devices[0].e_des``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from dwmarket.core import DEFAULT_HORIZON, DomainError
from dwmarket.devices import DeviceSpec, EvSpec, EwhSpec
from dwmarket.supply import SupplyModel

INITIAL_PRICE_RULES = ("flat-average", "zero", "explicit")

# Defaults for generated scenarios (physically typical residential values).
DEFAULT_A = 0.005
EV_RATE = 7.0
EV_E_DES = (8.0, 16.0)
EV_ARRIVAL = (17, 21)
EV_DEPARTURE = (6, 8)
EWH_DEFAULTS = dict(c_tank=0.2, r_loss=0.02, e_max=4.5, t_min=45.0, t_in=15.0, t_amb=20.0,
                    p_short=1.0, t0=45.0)
EWH_DAILY_DRAW = (6.0, 10.0)


class ScenarioError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.violations))


@dataclass(frozen=True)
class DwSettings:
    max_iters: int = 24
    gap_tol: float | None = None
    initial_price_rule: str = "flat-average"
    initial_prices: tuple | None = None


@dataclass(frozen=True)
class Household:
    id: str
    devices: tuple  # of (device_id, DeviceSpec)


@dataclass(frozen=True)
class ScenarioConfig:
    horizon: int
    supply: SupplyModel
    households: tuple
    dw: DwSettings = field(default_factory=DwSettings)
    seed: int | None = None

    @property
    def devices(self) -> list[tuple[str, DeviceSpec]]:
        """All devices in ascending id order."""
        return sorted((d for h in self.households for d in h.devices), key=lambda d: d[0])

    def device(self, device_id: str) -> DeviceSpec:
        for i, spec in self.devices:
            if i == device_id:
                return spec
        raise KeyError(device_id)


def _schema() -> dict:
    text = resources.files("dwmarket").joinpath("data/scenario.schema.json").read_text("utf-8")
    return json.loads(text)


def _locator(path) -> str:
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} is not allowed")


def parse_scenario(text: str | bytes) -> ScenarioConfig:
    """Validate a scenario document; raises :class:`ScenarioError` listing every problem."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ScenarioError([f"<file>: not UTF-8 ({exc.reason} at byte {exc.start})"]) from None
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except (ValueError, RecursionError) as exc:
        raise ScenarioError([f"<file>: not valid JSON ({exc})"]) from None
    return scenario_from_dict(doc)


def load_scenario(path) -> ScenarioConfig:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ScenarioError([f"<file>: cannot read {path}: {exc.strerror}"]) from None
    return parse_scenario(data)


def bundled_scenario_path() -> Path:
    return Path(str(resources.files("dwmarket").joinpath("data/default_8households.json")))


def _expand(value, H: int, where: str, problems: list) -> tuple | None:
    if isinstance(value, (int, float)):
        return (float(value),) * H
    if len(value) != H:
        problems.append(f"{where}: expected {H} hourly values, got {len(value)}")
        return None
    return tuple(float(v) for v in value)


def _build_device(dev: dict, H: int, where: str, problems: list) -> DeviceSpec | None:
    n_before = len(problems)
    if dev["type"] == "ev":
        e_max = _expand(dev["e_max"], H, f"{where}.e_max", problems)
        if len(problems) > n_before:
            return None
        ctor = lambda: EvSpec(e_max, dev["e_des"])  # noqa: E731
    else:
        vectors = {k: _expand(dev[k], H, f"{where}.{k}", problems) for k in ("t_in", "t_amb", "draw")}
        if len(problems) > n_before:
            return None
        ctor = lambda: EwhSpec(dev["c_tank"], dev["r_loss"], dev["e_max"], dev["t_min"],  # noqa: E731
                               vectors["t_in"], vectors["t_amb"], vectors["draw"],
                               dev["p_short"], dev.get("t0"))
    try:
        return ctor()
    except DomainError as exc:
        for item in str(exc).split("; "):
            problems.append(f"{where}.{item}")
        return None


def scenario_from_dict(doc) -> ScenarioConfig:
    validator = jsonschema.Draft7Validator(_schema())
    problems = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: [str(p) for p in e.absolute_path]):
        problems.append(f"{_locator(err.absolute_path)}: {err.message}")
    if problems:
        raise ScenarioError(problems)

    H = doc.get("horizon", DEFAULT_HORIZON)
    dw_doc = doc.get("dw", {})
    rule = dw_doc.get("initial_price_rule", "flat-average")
    initial = dw_doc.get("initial_prices")
    if rule == "explicit":
        if initial is None:
            problems.append("dw.initial_prices: required when initial_price_rule is 'explicit'")
        elif len(initial) != H:
            problems.append(f"dw.initial_prices: expected {H} hourly values, got {len(initial)}")

    seen: dict[str, str] = {}
    households = []
    seen_households: dict[str, str] = {}
    for hi, hh in enumerate(doc["households"]):
        hwhere = f"households[{hi}]"
        if hh["id"] in seen_households:
            problems.append(f"{hwhere}.id: duplicate household id {hh['id']!r} "
                            f"(also at {seen_households[hh['id']]}.id)")
        seen_households.setdefault(hh["id"], hwhere)
        devices = []
        for di, dev in enumerate(hh["devices"]):
            where = f"{hwhere}.devices[{di}]"
            if dev["id"] in seen:
                problems.append(f"duplicate device id {dev['id']!r} at {seen[dev['id']]}.id "
                                f"and {where}.id")
            else:
                seen[dev["id"]] = where
            spec = _build_device(dev, H, where, problems)
            devices.append((dev["id"], spec))
        households.append(Household(hh["id"], tuple(devices)))
    if problems:
        raise ScenarioError(problems)

    return ScenarioConfig(
        horizon=H,
        supply=SupplyModel(doc["supply"]["a"]),
        households=tuple(households),
        dw=DwSettings(
            max_iters=dw_doc.get("max_iters", 24),
            gap_tol=dw_doc.get("gap_tol"),
            initial_price_rule=rule,
            initial_prices=None if initial is None else tuple(float(v) for v in initial),
        ),
        seed=doc.get("seed"),
    )


def device_to_dict(device_id: str, spec: DeviceSpec) -> dict:
    if isinstance(spec, EvSpec):
        return {"id": device_id, "type": "ev", "e_max": list(spec.e_max), "e_des": spec.e_des}
    return {
        "id": device_id, "type": "ewh", "c_tank": spec.c_tank, "r_loss": spec.r_loss,
        "e_max": spec.e_max, "t_min": spec.t_min, "t_in": list(spec.t_in),
        "t_amb": list(spec.t_amb), "draw": list(spec.draw), "p_short": spec.p_short,
        "t0": spec.t0,
    }


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    dw = {"max_iters": cfg.dw.max_iters, "gap_tol": cfg.dw.gap_tol,
          "initial_price_rule": cfg.dw.initial_price_rule}
    if cfg.dw.initial_prices is not None:
        dw["initial_prices"] = list(cfg.dw.initial_prices)
    return {
        "horizon": cfg.horizon,
        "seed": cfg.seed,
        "supply": {"a": cfg.supply.a},
        "dw": dw,
        "households": [
            {"id": h.id, "devices": [device_to_dict(i, s) for i, s in h.devices]}
            for h in cfg.households
        ],
    }


def dump_scenario(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(cfg), indent=1) + "\n", encoding="utf-8")


def load_device(path) -> tuple[str, DeviceSpec, int]:
    """A standalone device file: one device object plus an optional ``horizon``."""
    try:
        doc = json.loads(Path(path).read_bytes().decode("utf-8"), parse_constant=_reject_constant)
    except (OSError, UnicodeDecodeError, ValueError, RecursionError) as exc:
        raise ScenarioError([f"<file>: cannot load device from {path}: {exc}"]) from None
    if not isinstance(doc, dict):
        raise ScenarioError(["<root>: device file must hold a JSON object"])
    doc = dict(doc)
    H = doc.pop("horizon", DEFAULT_HORIZON)
    wrapper = {"horizon": H, "supply": {"a": 1.0},
               "households": [{"id": "_", "devices": [doc]}]}
    try:
        cfg = scenario_from_dict(wrapper)
    except ScenarioError as exc:
        raise ScenarioError([v.replace("households[0].devices[0]", "device")
                             for v in exc.violations]) from None
    device_id, spec = cfg.devices[0]
    return device_id, spec, H


def generate_scenario(households: int, seed: int | None = 0, a: float = DEFAULT_A) -> ScenarioConfig:
    """Random day-ahead scenario: each household owns one EV and one water heater."""
    if households < 0:
        raise DomainError("households must be >= 0")
    H = DEFAULT_HORIZON
    rng = np.random.default_rng(seed)
    hours = np.arange(H)
    out = []
    for n in range(households):
        hid = f"h{n + 1:02d}"
        arrive = int(rng.integers(EV_ARRIVAL[0], EV_ARRIVAL[1] + 1))
        depart = int(rng.integers(EV_DEPARTURE[0], EV_DEPARTURE[1] + 1))
        e_max = np.where((hours >= arrive) | (hours < depart), EV_RATE, 0.0)
        e_des = round(float(rng.uniform(*EV_E_DES)), 2)
        ev = EvSpec(e_max, e_des)

        total = float(rng.uniform(*EWH_DAILY_DRAW))
        morning_share = float(rng.uniform(0.35, 0.6))
        draw = np.zeros(H)
        for peak, share in ((int(rng.integers(6, 9)), morning_share),
                            (int(rng.integers(18, 22)), 1.0 - morning_share)):
            draw[peak] += 0.6 * share * total
            draw[peak + 1] += 0.4 * share * total
        draw = np.round(draw, 3)
        d = EWH_DEFAULTS
        ewh = EwhSpec(d["c_tank"], d["r_loss"], d["e_max"], d["t_min"], [d["t_in"]] * H,
                      [d["t_amb"]] * H, draw, d["p_short"], d["t0"])
        out.append(Household(hid, ((f"{hid}-ev", ev), (f"{hid}-ewh", ewh))))
    return ScenarioConfig(horizon=H, supply=SupplyModel(a), households=tuple(out),
                          dw=DwSettings(), seed=seed)
