import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import random_ev, random_ewh
from dwmarket.core import DomainError, InfeasibleDeviceError
from dwmarket.devices import (EvSpec, EwhSpec, best_response, ev_best_response, ev_lp,
                              ewh_best_response, ewh_benefit, ewh_plan, net_cost,
                              plan_violations, tank_temperatures)
from dwmarket.lp import solve_lp
from dwmarket.oracle import ewh_plans

seeds = st.integers(0, 2**32 - 1)


def ewh(H=4, **kw):
    base = dict(c_tank=0.2, r_loss=0.02, e_max=4.5, t_min=45.0, t_in=[15.0] * H,
                t_amb=[20.0] * H, draw=[0.0] * H, p_short=1.0, t0=45.0)
    base.update(kw)
    return EwhSpec(**base)


class TestEvSpec:
    def test_rejects_bad_specs(self):
        with pytest.raises(DomainError):
            EvSpec([1.0, -1.0], 0.0)
        with pytest.raises(DomainError):
            EvSpec([1.0, 1.0], 3.0)
        with pytest.raises(DomainError):
            EvSpec([1.0, 1.0], -0.1)

    def test_infeasible_request_at_solve_time(self):
        spec = EvSpec.__new__(EvSpec)
        object.__setattr__(spec, "e_max", (1.0, 1.0))
        object.__setattr__(spec, "e_des", 5.0)
        with pytest.raises(InfeasibleDeviceError):
            ev_best_response([1.0, 1.0], spec)


class TestEvGreedy:
    def test_flat_prices_fill_earliest(self):
        bid = ev_best_response(np.full(24, 0.3), EvSpec([7.0] * 24, 14.0))
        assert list(bid.demand[:3]) == [7.0, 7.0, 0.0]
        assert bid.demand.sum() == 14.0 and bid.benefit == 0.0

    def test_cheapest_hour_saturates_first(self):
        p = np.full(24, 0.1)
        p[5] = 0.01
        e_max = np.zeros(24)
        e_max[5:7] = 10.0
        d = ev_best_response(p, EvSpec(e_max, 12.0)).demand
        assert d[5] == 10.0 and d[6] == 2.0 and d.sum() == 12.0

    @pytest.mark.parametrize("seed", range(200))
    def test_matches_lp(self, seed):
        rng = np.random.default_rng(seed)
        H = int(rng.integers(1, 25))
        spec = random_ev(rng, H)
        p = rng.uniform(0, 1, H) if seed % 3 else np.round(rng.uniform(0, 1, H), 1)  # ties too
        greedy = ev_best_response(p, spec)
        lp = solve_lp(ev_lp(p, spec))
        assert lp.status == "optimal"
        assert float(p @ greedy.demand) == pytest.approx(lp.objective, abs=1e-9)

    @settings(max_examples=100)
    @given(seeds)
    def test_exchange_argument(self, seed):
        rng = np.random.default_rng(seed)
        spec = random_ev(rng, 12)
        p = np.round(rng.uniform(0, 1, 12), 2)
        d = ev_best_response(p, spec).demand
        e_max = np.asarray(spec.e_max)
        used = d > 0
        spare = (d < e_max) & (e_max > 0)
        if used.any() and spare.any():
            assert p[used].max() <= p[spare].min()
        assert math.fsum(d) == pytest.approx(spec.e_des, rel=1e-12, abs=1e-12)
        assert not plan_violations(spec, d)


class TestEwh:
    def test_rejects_bad_specs(self):
        with pytest.raises(DomainError, match="t_min"):
            ewh(t_in=[50.0] * 4)
        with pytest.raises(DomainError):
            ewh(r_loss=1.0)
        with pytest.raises(DomainError):
            ewh(c_tank=0.0)
        with pytest.raises(DomainError):
            ewh(draw=[0.0, -1.0, 0.0, 0.0])

    def test_idle_tank_buys_nothing(self):
        spec = ewh(r_loss=0.0, t0=50.0)
        bid, plan = ewh_best_response(np.full(4, 0.2), spec)
        assert np.all(plan.e_in == 0) and np.all(plan.e_short == 0) and bid.benefit == 0.0

    def test_closed_form_without_heating(self):
        draw = [0.0, 0.0, 1.2, 0.0]
        spec = ewh(r_loss=0.0, e_max=0.0, draw=draw, t0=47.0)
        bid, plan = ewh_best_response(np.full(4, 0.2), spec)
        t2 = 47.0 - 1.2 / 0.2
        assert plan.t_tank[2] == pytest.approx(t2, abs=1e-12)
        assert plan.e_short[2] == pytest.approx(1.2 * (45.0 - t2) / (45.0 - 15.0), abs=1e-12)
        assert bid.benefit == pytest.approx(1.2 - plan.e_short[2], abs=1e-12)

    def test_recursion_matches_definition(self):
        rng = np.random.default_rng(3)
        spec = random_ewh(rng, 8)
        e_in = rng.uniform(0, spec.e_max, 8)
        T = tank_temperatures(e_in, spec)
        prev = spec.t0
        for h in range(8):
            expect = prev + (e_in[h] - spec.draw[h]) / spec.c_tank - spec.r_loss * (prev - spec.t_amb[h])
            assert T[h] == pytest.approx(expect, abs=1e-7)
            prev = T[h]

    @pytest.mark.parametrize("seed", range(50))
    def test_lp_against_grid(self, seed):
        rng = np.random.default_rng(1000 + seed)
        H = int(rng.integers(1, 5))
        step = 0.1
        spec = random_ewh(rng, H, e_max=round(float(rng.uniform(0.2, 1.0 if H < 4 else 0.5)), 1))
        p = rng.uniform(0, 1, H)
        bid, plan = ewh_best_response(p, spec)
        plans, benefits = ewh_plans(spec, step)
        grid_best = float(np.min(plans @ p - benefits))
        lp_value = net_cost(p, bid)
        slope = p.max() + spec.p_short * sum(spec.draw) / (spec.c_tank * (spec.t_min - 15.0))
        assert lp_value <= grid_best + 1e-7
        assert grid_best - lp_value <= H * step * slope + 1e-9

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.floats(0.1, 3.0), st.floats(1.0, 4.0))
    def test_penalty_monotone(self, seed, p_short, factor):
        rng = np.random.default_rng(seed)
        spec = random_ewh(rng, 6)
        p = rng.uniform(0, 1, 6)
        low = ewh_best_response(p, ewh(6, **{**spec.__dict__, "p_short": p_short}))[1]
        high = ewh_best_response(p, ewh(6, **{**spec.__dict__, "p_short": p_short * factor}))[1]
        assert high.e_short.sum() <= low.e_short.sum() + 1e-7

    @settings(max_examples=40, deadline=None)
    @given(seeds)
    def test_plan_feasible(self, seed):
        rng = np.random.default_rng(seed)
        spec = random_ewh(rng, 10)
        bid, plan = ewh_best_response(rng.uniform(0, 1, 10), spec)
        assert np.all(plan.e_in >= 0) and np.all(plan.e_in <= spec.e_max)
        assert np.all(plan.t_short >= np.maximum(0.0, spec.t_min - plan.t_tank) - 1e-12)
        assert np.allclose(plan.t_tank, tank_temperatures(plan.e_in, spec), atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_best_response_dominates_sampled_plans(seed):
    rng = np.random.default_rng(seed)
    H = 6
    p = rng.uniform(0, 1, H)
    ev, heater = random_ev(rng, H), random_ewh(rng, H)
    ev_value = best_response(p, ev).value_at(p)
    heater_value = best_response(p, heater).value_at(p)
    e_max = np.asarray(ev.e_max)
    for _ in range(50):
        # a random feasible EV plan: scale a random split of e_des into capacity
        w = rng.random(H) * (e_max > 0)
        d = np.minimum(w / w.sum() * ev.e_des if w.sum() else np.zeros(H), e_max)
        short = ev.e_des - d.sum()
        for h in np.flatnonzero(e_max > 0):
            add = min(short, e_max[h] - d[h])
            d[h] += add
            short -= add
        assert -(p @ d) <= ev_value + 1e-6
        e_in = rng.uniform(0, heater.e_max, H)
        alt = ewh_plan(e_in, heater)
        assert ewh_benefit(alt, heater) - p @ e_in <= heater_value + 1e-6
