"""Small scenario and spec builders shared by the tests."""

from __future__ import annotations

import numpy as np

from dwmarket.devices import EvSpec, EwhSpec
from dwmarket.scenario import DwSettings, Household, ScenarioConfig
from dwmarket.supply import SupplyModel


def scenario_of(devices, a=0.005, horizon=None, **dw):
    """One household per device; ``devices`` is a list of (id, spec)."""
    if horizon is None:
        horizon = devices[0][1].horizon if devices else 24
    households = tuple(Household(f"hh-{i}", ((i, spec),)) for i, spec in devices)
    return ScenarioConfig(horizon, SupplyModel(a), households, DwSettings(**dw))


def random_ev(rng, H, rate_max=5.0):
    e_max = np.round(rng.uniform(0, rate_max, H) * (rng.random(H) < 0.8), 2)
    if e_max.sum() == 0:
        e_max[rng.integers(H)] = 1.0
    e_des = round(float(rng.uniform(0, e_max.sum())), 2)
    return EvSpec(e_max, min(e_des, float(e_max.sum())))


def random_ewh(rng, H, e_max=None):
    draw = np.round(rng.uniform(0, 1.5, H) * (rng.random(H) < 0.6), 2)
    return EwhSpec(c_tank=float(rng.uniform(0.1, 0.3)), r_loss=float(rng.uniform(0, 0.05)),
                   e_max=float(rng.uniform(0.5, 2.0) if e_max is None else e_max), t_min=45.0,
                   t_in=[15.0] * H, t_amb=[20.0] * H, draw=draw,
                   p_short=float(rng.uniform(0.2, 2.0)), t0=float(rng.uniform(40, 50)))
