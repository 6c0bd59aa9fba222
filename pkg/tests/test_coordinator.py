import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import random_ev, random_ewh, scenario_of
from dwmarket.coordinator import (CONVERGED, ITERATION_LIMIT, aggregate_bids, disaggregate,
                                  initial_prices, run_dw)
from dwmarket.core import Bid, DomainError, ProtocolError
from dwmarket.devices import EvSpec, plan_violations
from dwmarket.scenario import generate_scenario


class TestInitialPrices:
    def test_flat_average(self):
        sc = scenario_of([("ev", EvSpec([7.0] * 24, 12.0))], a=0.5)
        assert np.array_equal(initial_prices(sc), np.full(24, 0.5))

    def test_empty_and_zero(self):
        assert np.array_equal(initial_prices(scenario_of([], horizon=24)), np.zeros(24))
        sc = scenario_of([("ev", EvSpec([7.0] * 24, 12.0))], initial_price_rule="zero")
        assert np.array_equal(initial_prices(sc), np.zeros(24))

    def test_explicit(self):
        sc = scenario_of([("ev", EvSpec([1.0] * 3, 1.0))], initial_price_rule="explicit",
                         initial_prices=(0.1, 0.2, 0.3))
        assert list(initial_prices(sc)) == [0.1, 0.2, 0.3]


class TestAggregate:
    def test_identity_and_sum(self):
        b = Bid([1.0, 2.0], 0.5)
        assert aggregate_bids([("a", b)]) == b
        agg = aggregate_bids([("a", Bid([1.0, 0.0], 2.0)), ("b", Bid([0.0, 1.0], 3.0))])
        assert list(agg.demand) == [1.0, 1.0] and agg.benefit == 5.0

    @given(st.integers(1, 40), st.lists(st.floats(0, 1e3), min_size=3, max_size=3),
           st.floats(-1e3, 1e3))
    def test_copies_scale(self, n, d, b):
        agg = aggregate_bids([(f"d{i:02d}", Bid(d, b)) for i in range(n)])
        assert np.allclose(agg.demand, n * np.array(d), rtol=1e-15)
        assert agg.benefit == pytest.approx(n * b, rel=1e-15, abs=1e-300)

    def test_duplicate_id(self):
        with pytest.raises(ProtocolError):
            aggregate_bids([("a", Bid([1.0])), ("a", Bid([2.0]))])
        with pytest.raises(DomainError):
            aggregate_bids([])


class TestDisaggregate:
    def test_single_weight(self):
        alloc = disaggregate([1.0], {"x": [Bid([1.0, 2.0], 0.3)]})
        assert list(alloc.demand["x"]) == [1.0, 2.0] and alloc.benefit["x"] == 0.3

    def test_average(self):
        alloc = disaggregate([0.5, 0.5], {"x": [Bid([2.0, 0.0]), Bid([0.0, 2.0])]})
        assert list(alloc.demand["x"]) == [1.0, 1.0]

    def test_missing_history(self):
        with pytest.raises(ProtocolError):
            disaggregate([0.5, 0.5], {"x": [Bid([2.0, 0.0])]})


def test_single_ev_spreads_flat():
    sc = scenario_of([("ev", EvSpec([7.0] * 24, 12.0))], a=0.01)
    res = run_dw(sc, max_iters=100)
    assert res.status == CONVERGED
    assert np.allclose(res.final.constructed_demand, 0.5, atol=1e-6)
    assert res.records[-1].gap <= res.gap_tol


def test_empty_market():
    res = run_dw(scenario_of([], horizon=24))
    assert res.status == CONVERGED and len(res.records) == 1
    m = res.records[0].metrics
    assert np.all(res.final.constructed_demand == 0)
    assert m.generation_cost == 0 and m.user_payment == 0


def test_budget_must_be_positive():
    with pytest.raises(DomainError):
        run_dw(scenario_of([("ev", EvSpec([1.0], 1.0))]), max_iters=0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_run_invariants(seed, iters):
    rng = np.random.default_rng(seed)
    H = 6
    devices = [(f"ev{i}", random_ev(rng, H)) for i in range(2)] + [("wh", random_ewh(rng, H))]
    sc = scenario_of(devices, a=0.05)
    res = run_dw(sc, max_iters=iters)
    objs = [r.master.objective for r in res.records]
    assert all(b <= a + 1e-9 for a, b in zip(objs, objs[1:]))
    assert all(r.gap >= -1e-9 for r in res.records)
    assert [r.iteration for r in res.records] == list(range(len(res.records)))
    assert res.status in (CONVERGED, ITERATION_LIMIT)
    # conservation and anytime feasibility
    total = res.allocation.total(H)
    assert np.max(np.abs(total - res.final.constructed_demand)) <= 1e-9
    for i, spec in devices:
        assert not plan_violations(spec, res.allocation.demand[i], tol=1e-9)


def test_random_scenario_converges_with_room():
    sc = generate_scenario(2, seed=5)
    res = run_dw(sc, max_iters=200)
    assert res.status == CONVERGED
    assert res.records[-1].gap <= res.gap_tol
