import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from gridloop.dispatch import (
    Generator,
    economic_dispatch,
    required_scenarios,
    scenario_dispatch,
    unit_commitment,
)
from gridloop.errors import InfeasibleError
from oracles import enumerate_commitment, grid_search_dispatch, triangle_instance


def _two_gens():
    return [Generator("g1", 0, 10.0, 0.0, 50.0), Generator("g2", 0, 20.0, 0.0, 50.0)]


def test_merit_order_example():
    res = economic_dispatch(_two_gens(), 60.0)
    assert res.outputs == pytest.approx({"g1": 50.0, "g2": 10.0})
    assert res.total_cost == pytest.approx(700.0)
    assert res.lmp[0] == pytest.approx(20.0)


def test_zero_demand():
    res = economic_dispatch(_two_gens(), 0.0)
    assert res.outputs == pytest.approx({"g1": 0.0, "g2": 0.0}, abs=1e-12)
    assert res.total_cost == pytest.approx(0.0, abs=1e-12)


def test_capacity_shortfall_is_named():
    with pytest.raises(InfeasibleError) as err:
        economic_dispatch(_two_gens(), 120.0)
    assert err.value.constraint == "capacity"


def test_piecewise_costs_fill_cheapest_segment_first():
    g1 = Generator("a", 0, ((20.0, 10.0), (40.0, 30.0)), 0.0, 40.0)
    g2 = Generator("b", 0, 20.0, 0.0, 40.0)
    res = economic_dispatch([g1, g2], 50.0)
    assert res.outputs == pytest.approx({"a": 20.0, "b": 30.0})
    assert res.total_cost == pytest.approx(20 * 10 + 30 * 20)


@pytest.mark.parametrize("seed", range(5))
def test_congested_triangle_matches_grid_search(seed):
    gens, demand, net = triangle_instance(seed)
    res = economic_dispatch(gens, demand, net)
    cost, outputs = grid_search_dispatch(gens, demand, net)
    assert res.total_cost == pytest.approx(cost, abs=0.5)
    assert np.allclose([res.outputs[g.id] for g in gens], outputs, atol=0.05)


@pytest.mark.parametrize("seed", [0, 4])
def test_lmp_splits_across_congested_line(seed):
    gens, demand, net = triangle_instance(seed)
    res = economic_dispatch(gens, demand, net)
    assert res.binding_lines == [0]
    prices = sorted(res.lmp.values())
    assert prices[-1] - prices[0] > 1.0
    # each LMP is the cost of one more MW at that bus
    for bus in res.lmp:
        bumped = dict(demand)
        bumped[bus] = bumped.get(bus, 0.0) + 1e-3
        delta = economic_dispatch(gens, bumped, net).total_cost - res.total_cost
        assert delta / 1e-3 == pytest.approx(res.lmp[bus], abs=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1, 100), min_size=3, max_size=3, unique=True), st.floats(0, 1))
def test_merit_order_and_uniform_lmp(costs, frac):
    gens = [Generator(f"g{i}", 0, c, 0.0, 30.0) for i, c in enumerate(costs)]
    res = economic_dispatch(gens, frac * 90.0)
    ranked = sorted(gens, key=lambda g: g.marginal_cost)
    outs = [res.outputs[g.id] for g in ranked]
    assert all(a >= b - 1e-9 for a, b in zip(outs, outs[1:]))


def test_uncongested_lmps_equal():
    gens, demand, net = triangle_instance(1)
    res = economic_dispatch(gens, demand, net)
    assert not res.binding_lines
    assert max(res.lmp.values()) - min(res.lmp.values()) < 1e-9


def test_unit_commitment_single_unit():
    g = Generator("u", 0, 10.0, 10.0, 50.0, startup_cost=100.0)
    sched = unit_commitment([g], [20.0, 30.0])
    assert sched.on == [(1,), (1,)]
    assert sched.total_cost == pytest.approx(600.0)
    assert sched.startup_cost == pytest.approx(100.0)


def test_unit_commitment_zero_demand_all_off():
    gens = [Generator("a", 0, 10.0, 5.0, 50.0, 10.0), Generator("b", 0, 20.0, 5.0, 50.0, 10.0)]
    sched = unit_commitment(gens, [0.0, 0.0, 0.0])
    assert sched.on == [(0, 0)] * 3
    assert sched.total_cost == 0.0


def _uc_fixture():
    gens = [
        Generator("base", 0, 12.0, 20.0, 60.0, startup_cost=400.0),
        Generator("mid", 0, 25.0, 10.0, 40.0, startup_cost=120.0),
        Generator("peak", 0, 45.0, 0.0, 30.0, startup_cost=15.0),
    ]
    return gens, [35.0, 70.0, 95.0, 18.0]


def _ed_by_linprog(gens):
    def ed(on, demand):
        live = [g for g, f in zip(gens, on) if f]
        if not live:
            return 0.0 if demand == 0 else math.inf
        res = linprog(
            [g.marginal_cost for g in live],
            A_eq=[[1.0] * len(live)],
            b_eq=[demand],
            bounds=[(g.p_min, g.p_max) for g in live],
            method="highs",
        )
        return res.fun if res.status == 0 else math.inf

    return ed


def test_unit_commitment_matches_exhaustive_enumeration():
    gens, demand = _uc_fixture()
    sched = unit_commitment(gens, demand)
    cost, best = enumerate_commitment(gens, demand, _ed_by_linprog(gens))
    assert sched.on == best
    assert sched.total_cost == pytest.approx(cost, abs=1e-6)
    assert sched.total_cost == pytest.approx(sched.energy_cost + sched.startup_cost)


def test_commitment_no_worse_than_always_on():
    gens, demand = _uc_fixture()
    gens = [Generator(g.id, 0, g.marginal_cost, 0.0, g.p_max, g.startup_cost) for g in gens]
    sched = unit_commitment(gens, demand)
    always = sum(economic_dispatch(gens, d).total_cost for d in demand) + sum(g.startup_cost for g in gens)
    assert sched.total_cost <= always + 1e-9


def test_unit_commitment_infeasible_hour_named():
    with pytest.raises(InfeasibleError) as err:
        unit_commitment(_two_gens(), [50.0, 150.0])
    assert err.value.details["hour"] == 1


def test_identical_scenarios_equal_economic_dispatch():
    gens, demand, net = triangle_instance(0)
    res = scenario_dispatch(gens, [demand] * 3, net, 0.0)
    ed = economic_dispatch(gens, demand, net)
    assert res.total_cost == pytest.approx(ed.total_cost, abs=1e-7)
    for g in gens:
        assert res.outputs[g.id] == pytest.approx(ed.outputs[g.id], abs=1e-7)


def test_worst_case_dominates_at_zero_epsilon():
    res = scenario_dispatch(_two_gens(), [40.0, 70.0], None, 0.0)
    assert sum(res.outputs.values()) == pytest.approx(70.0)
    assert res.total_cost == pytest.approx(economic_dispatch(_two_gens(), 70.0).total_cost)


def _merit_cost(gens, demand):
    left, cost = demand, 0.0
    for g in sorted(gens, key=lambda g: g.marginal_cost):
        take = min(left, g.p_max)
        cost += take * g.marginal_cost
        left -= take
    return cost


def test_epsilon_drops_costliest_scenario():
    from itertools import combinations

    scenarios = [55.0, 62.0, 81.0, 47.0, 70.0]
    res = scenario_dispatch(_two_gens(), scenarios, None, 0.2)
    keep = required_scenarios(5, 0.2)
    oracle = min(
        (_merit_cost(_two_gens(), max(scenarios[i] for i in kept)), tuple(sorted(set(range(5)) - set(kept))))
        for kept in combinations(range(5), keep)
    )
    assert res.dropped_scenarios == oracle[1] == (2,)
    assert res.total_cost == pytest.approx(oracle[0])


def test_scenario_cost_non_increasing_in_epsilon():
    scenarios = [55.0, 62.0, 81.0, 47.0, 70.0, 66.0]
    costs = [scenario_dispatch(_two_gens(), scenarios, None, e).total_cost for e in (0.0, 0.2, 0.4, 0.6)]
    assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))


def test_scenario_reserve_covers_shortfall():
    res = scenario_dispatch(_two_gens(), [100.0, 104.0], None, 0.0, reserve_mw=5.0, shortfall_cost=50.0)
    assert sum(res.outputs.values()) == pytest.approx(100.0)


def test_scenario_coverage_infeasible():
    with pytest.raises(InfeasibleError) as err:
        scenario_dispatch(_two_gens(), [150.0, 160.0], None, 0.0)
    assert err.value.constraint == "scenario_coverage"
