import math
from itertools import product

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridloop.errors import InfeasibleError
from gridloop.ev import (
    EvSession,
    PlacementProblem,
    centralized_schedule,
    charging_bound,
    decentralized_schedule,
    evcs_place,
    ev_local_project,
    greedy_schedule,
    placement_check,
    valley_objective,
)
from gridloop.grid import Bus, Line, Network, lindistflow_solve

BASE = np.array([5.0, 3.0, 1.0, 1.0, 3.0, 5.0])
FLEET = [
    EvSession(0, 0, 5, 3, 0.9, 10, 0.2, 0.8),
    EvSession(1, 1, 4, 2, 1.0, 6, 0.0, 1.0),
    EvSession(2, 2, 5, 4, 0.95, 8, 0.5, 1.0),
]


def qp_oracle(sessions, base, dk=1.0):
    """Solve the valley-filling QP directly."""
    K = len(base)
    W = cp.Variable((len(sessions), K))
    cons = [W >= 0]
    for i, s in enumerate(sessions):
        cons.append(W[i] <= np.array([charging_bound(s, k) for k in range(K)]))
        cons.append(cp.sum(W[i]) * dk == s.required_energy())
    agg = base + cp.sum(W, axis=0)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(agg)), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return prob.value, base + W.value.sum(axis=0)


def projection_by_scan(t, ub, S):
    """Exact projection onto {0 <= w <= ub, sum w = S} via breakpoint scan.

    The total ``sum clip(t + mu, 0, ub)`` is piecewise linear in ``mu`` with
    kinks at ``-t`` and ``ub - t``; the segment containing ``S`` is solved in
    closed form.
    """
    kinks = np.unique(np.concatenate([-t, ub - t]))

    def total(mu):
        return np.clip(t + mu, 0, ub).sum()

    for a, b in zip(kinks[:-1], kinks[1:]):
        fa, fb = total(a), total(b)
        if fa <= S <= fb and fb > fa:
            mu = a + (S - fa) * (b - a) / (fb - fa)
            return np.clip(t + mu, 0, ub)
    raise AssertionError("target energy outside the reachable range")


def test_charging_bound_window():
    s = EvSession("a", 2, 4, 7.0)
    assert [charging_bound(s, k) for k in range(6)] == [0, 0, 7, 7, 7, 0]


def test_single_symmetric_ev_is_uniform():
    s = EvSession(0, 0, 3, 2.0, 1.0, 4.0, 0.0, 1.0)
    prof = centralized_schedule([s], np.zeros(4))
    assert prof.rates[0].tolist() == [1.0, 1.0, 1.0, 1.0]
    prof = decentralized_schedule([s], np.zeros(4))
    assert prof.rates[0].tolist() == [1.0, 1.0, 1.0, 1.0]


def test_zero_energy_session_stays_idle():
    s = EvSession(0, 0, 5, 3.0, 1.0, 10.0, 0.5, 0.5)
    prof = centralized_schedule([s], BASE)
    assert not prof.rates.any()


def test_energy_shortfall_is_infeasible():
    s = EvSession(0, 1, 2, 1.0, 1.0, 10.0, 0.0, 1.0)
    with pytest.raises(InfeasibleError) as info:
        centralized_schedule([s], BASE)
    assert info.value.constraint == "energy"


def test_window_past_horizon_is_infeasible():
    with pytest.raises(InfeasibleError) as info:
        ev_local_project(np.zeros(4), EvSession(0, 1, 6, 1.0))
    assert info.value.constraint == "window"


def test_centralized_matches_qp_oracle():
    f_qp, agg_qp = qp_oracle(FLEET, BASE)
    prof = centralized_schedule(FLEET, BASE)
    assert valley_objective(prof.rates, BASE) == pytest.approx(f_qp, abs=1e-4)
    assert np.allclose(prof.aggregate(BASE), agg_qp, atol=1e-4)


def test_decentralized_matches_qp_oracle():
    f_qp, agg_qp = qp_oracle(FLEET, BASE)
    prof = decentralized_schedule(FLEET, BASE)
    assert valley_objective(prof.rates, BASE) == pytest.approx(f_qp, abs=1e-4)
    assert np.allclose(prof.aggregate(BASE), agg_qp, atol=1e-3)


def test_energy_delivered_exactly():
    prof = centralized_schedule(FLEET, BASE)
    for s, w in zip(FLEET, prof.rates):
        assert w.sum() == pytest.approx(s.required_energy(), abs=1e-9)
        assert np.all(w >= 0)
        assert np.all(w <= [charging_bound(s, k) + 1e-12 for k in range(BASE.size)])


def test_interior_slots_have_flat_aggregate():
    prof = centralized_schedule(FLEET, BASE)
    agg = prof.aggregate(BASE)
    interior = [
        k
        for k in range(BASE.size)
        if any(1e-6 < prof.rates[i, k] < charging_bound(s, k) - 1e-6 for i, s in enumerate(FLEET))
    ]
    assert len(interior) >= 2
    assert np.ptp(agg[interior]) < 1e-4


def test_local_projection_matches_breakpoint_scan():
    rng = np.random.default_rng(11)
    for _ in range(20):
        k0 = int(rng.integers(0, 3))
        k1 = int(rng.integers(4, 8))
        s = EvSession(0, k0, k1, float(rng.uniform(1, 5)), 1.0, 1.0, 0.0, 0.0)
        cap = s.rate_max * s.window_slots()
        S = float(rng.uniform(0.05, 0.95)) * cap
        s = EvSession(0, k0, k1, s.rate_max, 1.0, S, 0.0, 1.0)
        t = rng.normal(0, 3, 8)
        ub = np.array([charging_bound(s, k) for k in range(8)])
        w = ev_local_project(t, s)
        assert np.allclose(w, projection_by_scan(t, ub, S), atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_coordination_never_worse_than_greedy(seed):
    rng = np.random.default_rng(seed)
    K = 8
    base = rng.uniform(0, 6, K)
    sessions = []
    for i in range(int(rng.integers(1, 5))):
        k0 = int(rng.integers(0, K - 1))
        k1 = int(rng.integers(k0, K))
        rate = float(rng.uniform(1, 4))
        cap = rate * (k1 - k0 + 1)
        sessions.append(EvSession(i, k0, k1, rate, 1.0, cap, 0.0, float(rng.uniform(0, 1))))
    coord = centralized_schedule(sessions, base).aggregate(base)
    greedy = greedy_schedule(sessions, K).aggregate(base)
    assert np.var(coord) <= np.var(greedy) + 1e-9


# ----------------------------------------------------------- station placement


def six_node_feeder():
    """Two-branch feeder 0-1-2-3 and 1-4-5; the 4-5 line is long and weak."""
    loads = {1: 0.01, 2: 0.02, 3: 0.015, 4: 0.01, 5: 0.02}
    buses = [Bus(0, "slack")] + [Bus(i, p_inject=-p, q_inject=-0.3 * p) for i, p in loads.items()]
    lines = [
        Line(0, 1, r=0.05, x=0.04),
        Line(1, 2, r=0.12, x=0.08),
        Line(2, 3, r=0.15, x=0.10, current_limit=0.2),
        Line(1, 4, r=0.08, x=0.06),
        Line(4, 5, r=1.2, x=0.72),
    ]
    return Network(tuple(buses), tuple(lines), "radial_distribution")


def placement_fixture(**overrides):
    kw = dict(
        net=six_node_feeder(),
        candidates=(2, 3, 5),
        fixed_cost={2: 40.0, 3: 25.0, 5: 20.0},
        per_spot_cost=3.0,
        spot_power=7.0,
        demand_floor=60.0,
        budget=200.0,
        y_max=6,
    )
    kw.update(overrides)
    return PlacementProblem(**kw)


def path_voltages(net, p, q):
    """LinDistFlow by summing drops along each bus's path to the root."""
    parent = {}
    for ln in net.lines:
        parent[ln.to_bus] = ln
    ids = [b.id for b in net.buses]
    down_p = {i: 0.0 for i in ids}
    down_q = {i: 0.0 for i in ids}
    for i, pi, qi in zip(ids, p, q):
        node = i
        while node in parent:
            ln = parent[node]
            down_p[ln.to_bus] += pi
            down_q[ln.to_bus] += qi
            node = ln.from_bus
    v = {}
    for i in ids:
        drop, node = 0.0, i
        while node in parent:
            ln = parent[node]
            drop += 2 * (ln.r * down_p[node] + ln.x * down_q[node])
            node = ln.from_bus
        v[i] = 1.0 - drop
    flows = {ln.to_bus: (down_p[ln.to_bus], down_q[ln.to_bus]) for ln in net.lines}
    return v, flows


def enumerate_placements(prob):
    best = None
    n = len(prob.candidates)
    for x in product((0, 1), repeat=n):
        for y in product(range(prob.y_max + 1), repeat=n):
            if any(yi > prob.y_max * xi for xi, yi in zip(x, y)):
                continue
            if prob.spot_power * sum(y) < prob.demand_floor - 1e-9:
                continue
            p = [-b.p_inject for b in prob.net.buses]
            q = [-b.q_inject for b in prob.net.buses]
            for c, yi in zip(prob.candidates, y):
                p[prob.net.index(c)] += yi * prob.spot_power / prob.base_kva
            v, flows = path_voltages(prob.net, p, q)
            if any(not prob.v_min**2 - 1e-12 <= vi <= prob.v_max**2 + 1e-12 for vi in v.values()):
                continue
            lim = {ln.to_bus: ln.current_limit for ln in prob.net.lines}
            if any(abs(fp) + abs(fq) > math.sqrt(2) * lim[k] + 1e-12 for k, (fp, fq) in flows.items()):
                continue
            cost = sum(prob.fixed_cost[c] for c, xi in zip(prob.candidates, x) if xi) + prob.per_spot_cost * sum(y)
            key = (round(cost, 9), x, y)
            if best is None or key < best:
                best = key
    return best


def test_independent_lindistflow_agrees():
    net = six_node_feeder()
    p = np.array([-b.p_inject for b in net.buses])
    q = np.array([-b.q_inject for b in net.buses])
    v, _ = path_voltages(net, p, q)
    res = lindistflow_solve(net, p, q)
    assert np.allclose(res.voltage_sq, [v[b.id] for b in net.buses], atol=1e-14)


def test_placement_equals_full_enumeration():
    prob = placement_fixture()
    got = evcs_place(prob)
    cost, x, y = enumerate_placements(prob)
    assert (got.x, got.y) == (x, y)
    assert got.cost == pytest.approx(cost, abs=1e-9)


def test_voltage_band_moves_stations_off_the_weak_branch():
    loose = placement_fixture(v_min=0.9)
    got = evcs_place(loose)
    assert (got.cost, got.x, got.y) == enumerate_placements(loose)
    assert got.x[2] == 1
    tight = evcs_place(placement_fixture())
    assert tight.x[2] == 0
    assert tight.cost > got.cost


def test_placement_rechecks_independently():
    prob = placement_fixture()
    got = evcs_place(prob)
    assert placement_check(prob, got.y) is None
    p = [-b.p_inject for b in prob.net.buses]
    q = [-b.q_inject for b in prob.net.buses]
    for c, yi in zip(prob.candidates, got.y):
        p[prob.net.index(c)] += yi * prob.spot_power / prob.base_kva
    v, _ = path_voltages(prob.net, p, q)
    assert min(v.values()) >= prob.v_min**2 - 1e-12
    assert np.allclose(got.voltage_sq, [v[b.id] for b in prob.net.buses], atol=1e-14)


def test_zero_demand_builds_nothing():
    got = evcs_place(placement_fixture(demand_floor=0.0))
    assert got.x == (0, 0, 0) and got.y == (0, 0, 0)
    assert got.cost == 0


def test_budget_below_cheapest_station_names_budget():
    with pytest.raises(InfeasibleError) as info:
        evcs_place(placement_fixture(budget=10.0))
    assert info.value.constraint == "budget"


def test_demand_above_all_candidates_names_floor():
    with pytest.raises(InfeasibleError) as info:
        evcs_place(placement_fixture(demand_floor=1000.0))
    assert info.value.constraint == "demand_floor"


def test_voltage_infeasible_names_voltage():
    with pytest.raises(InfeasibleError) as info:
        evcs_place(placement_fixture(v_min=0.999))
    assert info.value.constraint == "voltage"
