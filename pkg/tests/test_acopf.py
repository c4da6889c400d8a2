from dataclasses import replace

import numpy as np
import pytest

from conftest import case_path
from oracles import two_bus_pf
from gridlearn.acopf import (DispatchSolution, OpfOptions, OpfStatus, check_feasibility,
                             max_experienced_flows, relax_branch_limits, solve_opf, solve_opf_batch)
from gridlearn.netmodel import build_ybus, load_case_file
from gridlearn.powerflow import branch_flows, power_injection
from gridlearn.scenarios import LoadScenario

# SLSQP reference from tests/oracles.scipy_opf on the nominal case9 loads, frozen
CASE9_REFERENCE_COST = 5296.686204


def _nominal(net):
    p, q = net.nominal_loads()
    return LoadScenario(p, q)


def _kkt_ok(sol, tol=1e-6):
    return all(sol.kkt[k] <= tol for k in ("feascond", "gradcond", "compcond"))


def _balance(net, scen, sol):
    s = power_injection(build_ybus(net), sol.v_mag, sol.theta)
    sd = np.zeros(net.n_bus, dtype=complex)
    sd[net.pq] = scen.p_load + 1j * scen.q_load
    return np.abs(s - net.gen_incidence @ (sol.p_gen + 1j * sol.q_gen) + sd).max()


@pytest.mark.parametrize("name", ["case2", "case3", "case9", "case9_hydroslack"])
def test_kkt_and_balance(name):
    net = load_case_file(case_path(name))
    scen = _nominal(net)
    sol = solve_opf(net, scen)
    assert sol.status is OpfStatus.OPTIMAL
    assert _kkt_ok(sol)
    assert _balance(net, scen, sol) <= 1e-6
    assert check_feasibility(net, sol, scenario=scen).feasible


def test_two_bus_grid_search(case2):
    scen = _nominal(case2)
    sol = solve_opf(case2, scen)
    # one generator: cost is set by slack output, which depends only on V1
    best = np.inf
    for v1 in np.linspace(0.9, 1.1, 20001):
        v2, s1 = two_bus_pf(v1, scen.p_load[0], scen.q_load[0], 0.01, 0.1, 0.02)
        if 0.9 <= abs(v2) <= 1.1 and -1.0 <= s1.imag <= 1.0:
            best = min(best, 10 * 100 * s1.real)
    assert sol.objective == pytest.approx(best, rel=1e-4)
    assert sol.v_mag[0] == pytest.approx(1.1, abs=1e-4)


def test_case9_reference(case9):
    sol = solve_opf(case9, _nominal(case9))
    assert sol.objective == pytest.approx(CASE9_REFERENCE_COST, rel=1e-6)


def test_merit_order(case3):
    sol = solve_opf(case3, _nominal(case3))
    # the cheap unit runs at its ceiling before the expensive one picks up the rest
    assert sol.p_gen[1] == pytest.approx(0.6, abs=1e-5)
    assert 0.2 < sol.p_gen[0] < 0.3


def test_cost_monotone_in_cheap_capacity(case3):
    costs = []
    for pmax in (0.2, 0.4, 0.6, 0.8):
        gens = list(case3.generators)
        gens[1] = replace(gens[1], p_max=pmax)
        costs.append(solve_opf(case3.with_generators(gens), _nominal(case3)).objective)
    assert all(a >= b - 1e-6 for a, b in zip(costs, costs[1:]))


def test_warm_start(case9):
    scen = _nominal(case9)
    cold = solve_opf(case9, scen)
    warm = solve_opf(case9, scen, warm=cold)
    assert warm.iterations <= 3
    assert warm.objective == pytest.approx(cold.objective, rel=1e-8)


def test_batch_matches_single(case9):
    p0, q0 = case9.nominal_loads()
    rng = np.random.default_rng(0)
    f = 1 + 0.1 * rng.standard_normal((4, 1))
    sols = solve_opf_batch(case9, p0 * f, q0 * f)
    for k in range(4):
        one = solve_opf(case9, LoadScenario(p0 * f[k], q0 * f[k]))
        assert sols[k].objective == pytest.approx(one.objective, rel=1e-8)


def test_infeasible_load_is_reported(case2):
    sol = solve_opf(case2, LoadScenario(np.array([30.0]), np.array([5.0])))
    assert sol.status is not OpfStatus.OPTIMAL


def test_branch_limit_binds(case9):
    scen = _nominal(case9)
    free = solve_opf(case9, scen)
    sf, st = branch_flows(case9, free.v_mag, free.theta)
    flow = np.maximum(np.abs(sf), np.abs(st))
    k = int(np.argmax(flow))
    brs = list(case9.branches)
    brs[k] = replace(brs[k], s_max=0.8 * flow[k])
    tight = case9.with_branches(brs)
    sol = solve_opf(tight, scen)
    assert sol.status is OpfStatus.OPTIMAL
    sf, st = branch_flows(tight, sol.v_mag, sol.theta)
    assert max(abs(sf[k]), abs(st[k])) <= 0.8 * flow[k] + 1e-6
    assert sol.objective >= free.objective - 1e-6


def test_relaxed_limits(case9):
    relaxed = relax_branch_limits(case9, 1e4)
    assert np.all(relaxed.s_max == 1e4)
    sols = solve_opf_batch(relaxed, *[np.stack([x] * 2) for x in case9.nominal_loads()])
    flows = max_experienced_flows(relaxed, sols)
    assert flows.shape == (len(case9.branches),)
    assert np.all(flows < 1e4) and np.all(flows >= 0)


def test_violation_example(case9):
    sol = solve_opf(case9, _nominal(case9))
    p_hi = case9.p_bounds[1]
    pg = sol.p_gen.copy()
    pg[0] = p_hi[0] + 0.014
    rep = check_feasibility(case9, replace(sol, p_gen=pg))
    assert rep.delta_pg == pytest.approx(0.014, abs=1e-12)
    assert not rep.feasible and rep.pg_violators == (0,)
    # inside the tolerance counts as satisfied
    pg[0] = p_hi[0] + 5e-5
    rep = check_feasibility(case9, replace(sol, p_gen=pg))
    assert rep.delta_pg == 0.0 and rep.feasible


def test_dict_round_trip(case3):
    sol = solve_opf(case3, _nominal(case3))
    back = DispatchSolution.from_dict(sol.to_dict())
    for name in ("p_gen", "q_gen", "v_mag", "theta"):
        np.testing.assert_array_equal(getattr(back, name), getattr(sol, name))
    assert back.status is sol.status and back.iterations == sol.iterations
    assert back.objective == sol.objective
    np.testing.assert_array_equal(back.duals["lam"], sol.duals["lam"])


def test_options_respected(case9):
    sol = solve_opf(case9, _nominal(case9), opts=OpfOptions(max_iter=3))
    assert sol.status is OpfStatus.MAX_ITER and sol.iterations == 3


def test_hydro_slack_binds_at_cap():
    net = load_case_file(case_path("case9_hydroslack"))
    sol = solve_opf(net, _nominal(net))
    assert sol.p_gen[0] == pytest.approx(net.generators[0].p_max, abs=1e-5)
