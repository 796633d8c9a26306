from dataclasses import replace
from itertools import product

import numpy as np
import pytest
from scipy.optimize import linprog

from gridloop.demand import (
    FleetTracker,
    ThermalHouse,
    TrackingController,
    feasible_energy_range,
    generate_fleet,
    lp_relaxed_schedule,
    simulate_tracking,
    thermal_step,
    tracking_step,
)
from gridloop.errors import InfeasibleError

SUB_H = 0.05


def euler_slot_temps(house, ambient, u, slot_h=1.0, sub_h=SUB_H):
    """Temperatures at slot ends with duty cycle ``u[t]`` held over each slot."""
    theta, out = house.temp, []
    for amb, ut in zip(ambient, u):
        for _ in range(int(round(slot_h / sub_h))):
            theta += sub_h * (house.alpha * (amb - theta) - house.cooling_rate * ut)
        out.append(theta)
    return np.array(out)


def linprog_schedule(houses, price, ambient, energy):
    """Same relaxed program built by superposition and handed to HiGHS."""
    N, T = len(houses), len(price)
    A_ub, b_ub = [], []
    for n, h in enumerate(houses):
        base = euler_slot_temps(h, ambient, np.zeros(T))
        cols = np.array([euler_slot_temps(h, ambient, np.eye(T)[s]) - base for s in range(T)]).T
        for t in range(T):
            row = np.zeros(N * T)
            row[n * T : (n + 1) * T] = cols[t]
            A_ub += [row, -row]
            b_ub += [h.comfort_high - base[t], base[t] - h.comfort_low]
    c = np.concatenate([h.ac_power * np.asarray(price) for h in houses])
    A_eq = np.concatenate([np.full(T, h.ac_power) for h in houses])[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[energy], bounds=(0, 1), method="highs")
    assert res.status == 0
    return res.fun, res.x.reshape(N, T)


def two_houses(**kw):
    a = ThermalHouse(0, alpha=0.3, beta=1.0, comfort_low=18, comfort_high=30, temp=24, ac_power=3.0, **kw)
    b = ThermalHouse(1, alpha=0.25, beta=0.9, comfort_low=18, comfort_high=30, temp=23, ac_power=2.5, **kw)
    return [a, b]


def test_thermal_step_equilibrium():
    h = ThermalHouse(0, 1.0, 0.5, 20, 26, temp=24.0, ac_power=2.0)
    assert thermal_step(h, 24.0, False, 0.1) == 24.0


def test_thermal_step_cooling_increment():
    h = ThermalHouse(0, 1.0, 0.5, 20, 26, temp=24.0, ac_power=2.0)
    assert thermal_step(h, 24.0, True, 0.1) - 24.0 == pytest.approx(-0.1, abs=1e-12)


def test_thermal_step_relaxes_to_ambient():
    h = ThermalHouse(0, 0.5, 0.5, 20, 26, temp=22.0)
    for _ in range(2000):
        h = replace(h, temp=thermal_step(h, 30.0, False, 0.05))
    assert abs(h.temp - 30.0) < 1e-3


def test_thermal_step_stability_limit():
    with pytest.raises(ValueError):
        thermal_step(ThermalHouse(0, 1.0, 0.5, 20, 26, temp=24.0), 25.0, False, 0.2)


def test_budget_filling_horizon_gives_constant_duty():
    h = ThermalHouse(0, 0.3, 1.0, 10, 40, temp=25.0, ac_power=2.0)
    plan = lp_relaxed_schedule([h], np.full(6, 0.2), np.full(6, 25.0), energy=12.0)
    assert np.allclose(plan.u, 1.0, atol=1e-9)
    assert plan.cost == pytest.approx(2.4, abs=1e-9)


def test_flat_price_ties_go_to_earliest_slots():
    h = ThermalHouse(0, 0.3, 1.0, 10, 40, temp=25.0, ac_power=2.0)
    plan = lp_relaxed_schedule([h], np.full(6, 0.2), np.full(6, 25.0), energy=6.0)
    assert np.allclose(plan.u[0], [1, 1, 1, 0, 0, 0], atol=1e-9)


def test_zero_budget_plan_is_idle():
    h = ThermalHouse(0, 0.3, 1.0, 20, 26, temp=23.0)
    plan = lp_relaxed_schedule([h], np.full(4, 0.2), np.full(4, 23.0), energy=0.0)
    assert not plan.u.any()
    assert plan.cost == 0


def test_two_price_budget_lands_in_cheap_slots():
    price = np.array([0.3, 0.3, 0.1, 0.1, 0.3, 0.3])
    ambient = np.full(6, 26.0)
    houses = two_houses()
    plan = lp_relaxed_schedule(houses, price, ambient, energy=9.0)
    fun, _ = linprog_schedule(houses, price, ambient, 9.0)
    assert plan.cost == pytest.approx(fun, abs=1e-7)
    expensive = price > 0.1
    assert plan.p_ref[expensive].sum() == pytest.approx(0, abs=1e-9)
    assert plan.p_ref.sum() == pytest.approx(9.0, abs=1e-6)


def test_comfort_constrained_lp_matches_highs():
    price = np.array([0.08, 0.08, 0.15, 0.3, 0.3, 0.15])
    ambient = np.array([27, 29, 31, 33, 33, 30.0])
    houses = [replace(h, comfort_low=21, comfort_high=25) for h in two_houses()]
    lo, hi = feasible_energy_range(houses, ambient)
    energy = 0.5 * (lo + hi)
    plan = lp_relaxed_schedule(houses, price, ambient, energy)
    fun, _ = linprog_schedule(houses, price, ambient, energy)
    assert plan.cost == pytest.approx(fun, abs=1e-7)
    for h, row in zip(houses, plan.u):
        temps = euler_slot_temps(h, ambient, row)
        assert np.all(temps <= h.comfort_high + 1e-7)
        assert np.all(temps >= h.comfort_low - 1e-7)


def test_relaxation_bounds_every_binary_schedule():
    price = np.array([0.3, 0.1, 0.2, 0.1, 0.3, 0.2])
    ambient = np.array([28, 30, 31, 31, 30, 28.0])
    houses = [replace(h, comfort_low=20, comfort_high=27) for h in two_houses()]
    energy = 3.0 * 3 + 2.5 * 2
    best = np.inf
    for bits in product((0, 1), repeat=12):
        u = np.array(bits, dtype=float).reshape(2, 6)
        if abs(sum(h.ac_power * r.sum() for h, r in zip(houses, u)) - energy) > 1e-9:
            continue
        temps = [euler_slot_temps(h, ambient, r) for h, r in zip(houses, u)]
        if all(np.all((t >= h.comfort_low) & (t <= h.comfort_high)) for h, t in zip(houses, temps)):
            best = min(best, sum(h.ac_power * price @ r for h, r in zip(houses, u)))
    assert np.isfinite(best)
    plan = lp_relaxed_schedule(houses, price, ambient, energy)
    assert plan.cost <= best + 1e-9


def test_hot_ambient_is_comfort_infeasible_and_named():
    h = ThermalHouse(7, 0.4, 0.5, 21, 25, temp=24.0, ac_power=1.0)
    with pytest.raises(InfeasibleError) as info:
        lp_relaxed_schedule([h], np.full(6, 0.1), np.full(6, 45.0), energy=3.0)
    assert info.value.constraint == "comfort"
    assert info.value.details["house"] == 7
    assert info.value.details["time_h"] > 0


def test_unreachable_budget_is_named():
    with pytest.raises(InfeasibleError) as info:
        lp_relaxed_schedule(two_houses(), np.full(3, 0.1), np.full(3, 25.0), energy=1000.0)
    assert info.value.constraint == "energy"


def test_tracking_balanced_error_gives_zero_command():
    fleet = generate_fleet(5, 1)
    total = sum(h.ac_power for h in fleet if h.on)
    v, out, _ = tracking_step(fleet, total, total, TrackingController())
    assert v == 0
    assert [h.setpoint for h in out] == [h.setpoint for h in fleet]


def test_tracking_zero_reference_switches_fleet_off():
    fleet = [replace(h, temp=24.0, on=True) for h in generate_fleet(6, 2)]
    ctrl = TrackingController()
    p_total = sum(h.ac_power for h in fleet)
    for _ in range(40):
        v, fleet, ctrl = tracking_step(fleet, 0.0, p_total, ctrl, ambient=24.0)
        p_total = sum(h.ac_power for h in fleet if h.on)
    assert v < 0
    assert all(h.setpoint == h.comfort_high for h in fleet)
    assert p_total == 0


def test_tracking_holds_comfort_within_deadband():
    fleet = generate_fleet(8, 3)
    hours = np.arange(6)
    ambient = 30 + 3 * np.sin(hours / 6 * np.pi)
    price = np.where(hours < 3, 0.1, 0.3)
    lo, hi = feasible_energy_range(fleet, ambient)
    plan = lp_relaxed_schedule(fleet, price, ambient, 0.5 * (lo + hi))
    run = simulate_tracking(fleet, plan)
    low = np.array([h.comfort_low - h.deadband for h in fleet])
    high = np.array([h.comfort_high + h.deadband for h in fleet])
    assert np.all(run.temps >= low - 1e-9)
    assert np.all(run.temps <= high + 1e-9)


def test_tracker_steps_match_batch_run():
    fleet = generate_fleet(4, 5)
    plan = lp_relaxed_schedule(fleet, np.full(2, 0.1), np.full(2, 26.0), energy=6.0)
    run = simulate_tracking(fleet, plan)
    tr = FleetTracker(fleet, plan)
    p = [tr.step()["p_total"] for _ in range(tr.steps)]
    assert np.array_equal(p, run.p_total)
    assert tr.energy == run.energy


def test_generated_fleet_is_reproducible():
    assert generate_fleet(10, 4) == generate_fleet(10, 4)
    assert generate_fleet(10, 4) != generate_fleet(10, 5)
