"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line (visible in
``pytest -v`` output) and then asserts, so a failing criterion fails the
suite. Run directly with ``python3 tests/test_acceptance.py``.
"""

import json
import math
import time

import numpy as np
import pytest

from builders import random_ev, random_ewh, scenario_of
from dwmarket.cli import main as cli_main
from dwmarket.coordinator import CONVERGED, default_gap_tol, run_dw
from dwmarket.core import par
from dwmarket.devices import ev_best_response, ev_lp, plan_violations
from dwmarket.lp import solve_lp
from dwmarket.oracle import discretization_bound, joint_enumerate, nash_certificate
from dwmarket.report import read_vector
from dwmarket.scenario import bundled_scenario_path, generate_scenario, load_scenario

pytestmark = pytest.mark.slow

SEEDS = range(20)
EXTENDED_BUDGET = 200


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def timed_run(scenario, **kw):
    t0 = time.perf_counter()
    res = run_dw(scenario, **kw)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def bundled():
    return load_scenario(bundled_scenario_path())


@pytest.fixture(scope="module")
def corpus(bundled):
    """Scenarios for the multi-run criteria: the bundled day plus 20 generated days."""
    return [("bundled", bundled)] + [(f"seed {s}", generate_scenario(8, s)) for s in SEEDS]


@pytest.fixture(scope="module")
def default_runs(corpus):
    """Each scenario at its configured (24-iteration) budget."""
    return {name: timed_run(sc) for name, sc in corpus}


@pytest.fixture(scope="module")
def long_runs(corpus):
    """Each scenario with room to converge, for the equilibrium check."""
    return {name: timed_run(sc, max_iters=EXTENDED_BUDGET) for name, sc in corpus}


@pytest.fixture(scope="module")
def bundled_cli(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundled")
    code = cli_main(["run", "--out", str(out)])
    return code, out, json.loads((out / "summary.json").read_text())


def test_1_monotone_objective(capsys, default_runs, long_runs):
    worst_step = -math.inf
    for runs in (default_runs, long_runs):
        for res, secs in runs.values():
            objs = [r.master.objective for r in res.records]
            worst_step = max([worst_step] + [b - a for a, b in zip(objs, objs[1:])])
    slowest = max(secs for runs in (default_runs, long_runs) for _, secs in runs.values())
    ok = worst_step <= 1e-9 and slowest < 5.0
    report(capsys, 1, ok, f"(largest objective increase {worst_step:.3g}, slowest run "
                          f"{slowest:.2f}s over {len(default_runs)} scenarios at both budgets)")


def test_2_gap_behavior(capsys, default_runs, long_runs):
    min_gap = min(r.gap for runs in (default_runs, long_runs) for res, _ in runs.values()
                  for r in res.records)
    res, _ = default_runs["bundled"]
    tol = default_gap_tol(res.records[0].bid, load_scenario(bundled_scenario_path()).supply)
    hit = next((r.iteration for r in res.records if r.gap <= tol), None)
    ok = min_gap >= -1e-9 and hit is not None and hit < 24
    report(capsys, 2, ok, f"(min gap {min_gap:.3g}; bundled gap after 24 iterations "
                          f"{res.records[-1].gap:.3g} vs tolerance {tol:.3g}; "
                          f"first iteration within tolerance: {hit})")


def test_3_oracle_equivalence(capsys):
    t0 = time.perf_counter()
    worst, details = -math.inf, []
    ok = True
    for seed in range(10):
        rng = np.random.default_rng(7000 + seed)
        H = int(rng.integers(1, 4))
        devices = [("ev", random_ev(rng, H, rate_max=2.0))]
        if seed % 2 == 0:
            devices.append(("wh", random_ewh(rng, H, e_max=1.0)))
        sc = scenario_of(devices, a=float(rng.uniform(0.05, 0.5)))
        dw = run_dw(sc, max_iters=100).final.objective
        oracle = joint_enumerate(sc, 0.25).net_cost
        bound = discretization_bound(sc, 0.25)
        diff = oracle - dw
        worst = max(worst, diff / bound if bound else diff)
        ok &= dw <= oracle + 1e-9 and diff <= bound
    secs = time.perf_counter() - t0
    ok &= secs < 60
    report(capsys, 3, ok, f"(10 tiny instances, worst oracle-DW difference {worst:.3g} of the "
                          f"discretization bound, {secs:.1f}s)")


def test_4_nash_certificate(capsys, corpus, default_runs, long_runs):
    scenarios = dict(corpus)
    converged = [(name, res) for runs in (default_runs, long_runs)
                 for name, (res, _) in runs.items() if res.status == CONVERGED]
    failures = []
    worst_price = 0.0
    for name, res in converged:
        cert = nash_certificate(res.allocation, scenarios[name], eps=1e-5, price_tol=1e-9)
        worst_price = max(worst_price, cert.price_error)
        if not cert.passed:
            failures.append(f"{name}: {'; '.join(cert.failures)}")
    unconverged = sorted(n for n, (r, _) in long_runs.items() if r.status != CONVERGED)
    ok = bool(converged) and not failures and not unconverged
    report(capsys, 4, ok, f"({len(converged)} converged runs certified, worst price error "
                          f"{worst_price:.3g}; not converged within {EXTENDED_BUDGET}: "
                          f"{unconverged or 'none'}; failures: {failures or 'none'})")


def test_5_conservation(capsys, default_runs, long_runs):
    worst = 0.0
    for runs in (default_runs, long_runs):
        for res, _ in runs.values():
            H = len(res.final.constructed_demand)
            worst = max(worst, float(np.max(np.abs(res.allocation.total(H)
                                                    - res.final.constructed_demand))))
    report(capsys, 5, worst <= 1e-9, f"(worst hourly mismatch {worst:.3g} kWh over "
                                     f"{len(default_runs) + len(long_runs)} runs)")


def test_6_ev_greedy_optimal(capsys):
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng(90_000 + seed)
        H = int(rng.integers(1, 25))
        spec = random_ev(rng, H, rate_max=7.0)
        p = rng.uniform(0, 1, H)
        lp = solve_lp(ev_lp(p, spec))
        worst = max(worst, abs(float(p @ ev_best_response(p, spec).demand) - lp.objective))
    report(capsys, 6, worst <= 1e-9, f"(200 pairs, worst |greedy - LP| {worst:.3g})")


def test_7_par_reduction(capsys, bundled_cli):
    _, out, summary = bundled_cli
    d0, dF = read_vector(out / "demand_initial.csv"), read_vector(out / "demand_final.csv")
    p0, pF = par(d0), par(dF)
    ok = pF <= 0.7 * p0 and dF.max() < d0.max()
    report(capsys, 7, ok, f"(demand PAR {p0:.3f} -> {pF:.3f}, peak {d0.max():.2f} -> "
                          f"{dF.max():.2f} kWh)")


def test_8_anytime_feasibility(capsys, bundled, tmp_path):
    problems = []
    for iters in (1, 3):
        out = tmp_path / f"i{iters}"
        cli_main(["run", "--out", str(out), "--iters", str(iters)])
        rows = (out / "allocation.csv").read_text().splitlines()[1:]
        for row in rows:
            cells = row.split(",")
            plan = np.array([float(x) for x in cells[2:]])
            problems += [f"--iters {iters} {cells[0]}: {v}"
                         for v in plan_violations(bundled.device(cells[0]), plan, tol=1e-9)]
        assert len(rows) == 16
    report(capsys, 8, not problems, f"(32 device plans checked; violations: {problems or 'none'})")


def test_9_transport_equivalence(capsys, tmp_path):
    cli_main(["run", "--out", str(tmp_path / "inproc")])
    cli_main(["run", "--out", str(tmp_path / "tcp"), "--transport", "tcp"])
    a = (tmp_path / "inproc" / "iterations.csv").read_bytes()
    b = (tmp_path / "tcp" / "iterations.csv").read_bytes()
    rows = len(a.splitlines()) - 1
    report(capsys, 9, a == b, f"(16 TCP agents on loopback vs in-process, {rows} rows, "
                              f"identical bytes: {a == b})")


def test_10_cost_trajectories(capsys, bundled_cli):
    _, _, s = bundled_cli
    ok = s["generation_cost_final"] <= s["generation_cost_initial"] and \
        s["user_payment_final"] <= s["user_payment_initial"]
    report(capsys, 10, ok, f"(generation cost {s['generation_cost_initial']:.3f} -> "
                           f"{s['generation_cost_final']:.3f}, user payment "
                           f"{s['user_payment_initial']:.3f} -> {s['user_payment_final']:.3f})")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
