"""Two-layer direct control of air-conditioner fleets.

Layer 1 schedules the fleet: the LP relaxation of the on/off problem over
hourly slots gives a total power reference. Layer 2 tracks that reference
in real time by broadcasting one PI command that shifts every thermostat
setpoint; each house keeps its own hysteresis thermostat.

Temperatures are in degrees C, time in hours, power in kW. Houses are
cooled: running the AC lowers the indoor temperature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import InfeasibleError
from .lp import solve_lp

PHYSICS_STEP_H = 0.05
TIE_BREAK = 1e-9
ENERGY_TOL = 1e-6


@dataclass(frozen=True)
class ThermalHouse:
    id: int | str
    alpha: float
    beta: float
    comfort_low: float
    comfort_high: float
    temp: float
    setpoint: float | None = None
    deadband: float = 0.5
    ac_power: float = 3.0
    efficiency: float = 1.0
    on: bool = False

    def __post_init__(self):
        if not self.comfort_low < self.comfort_high:
            raise ValueError(f"house {self.id}: comfort_low must be below comfort_high")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"house {self.id}: alpha and beta must be positive")
        if not -20.0 <= self.temp <= 60.0:
            raise ValueError(f"house {self.id}: temperature {self.temp} outside [-20, 60] C")
        if self.ac_power < 0 or self.deadband < 0 or self.efficiency <= 0:
            raise ValueError(f"house {self.id}: ac_power, deadband >= 0 and efficiency > 0 required")
        if self.setpoint is None:
            object.__setattr__(self, "setpoint", 0.5 * (self.comfort_low + self.comfort_high))

    @property
    def cooling_rate(self) -> float:
        """Temperature drop rate contributed by the AC at full power, C/h."""
        return self.beta * self.efficiency * self.ac_power


@dataclass(frozen=True)
class FleetPlan:
    u: np.ndarray
    """Relaxed duty cycle per house and slot, shape ``(n_house, n_slot)``."""
    p_ref: np.ndarray
    """Fleet power reference per slot, kW."""
    energy: float
    price: np.ndarray
    ambient: np.ndarray
    slot_h: float
    cost: float
    temps: np.ndarray
    """Planned temperatures at slot boundaries, shape ``(n_house, n_slot + 1)``."""

    def reference_at(self, t_h: float) -> float:
        k = min(int(math.floor(t_h / self.slot_h + 1e-9)), self.p_ref.size - 1)
        return float(self.p_ref[k])


def thermal_step(house: ThermalHouse, ambient: float, on: bool, dt: float) -> float:
    """One explicit-Euler step of ``dtheta/dt = alpha (ambient - theta) - beta eta P [on]``."""
    if dt > 0.1 / house.alpha * (1 + 1e-12):
        raise ValueError(f"dt {dt} h exceeds the stability limit 0.1/alpha = {0.1 / house.alpha} h")
    drive = house.alpha * (ambient - house.temp) - (house.cooling_rate if on else 0.0)
    return house.temp + dt * drive


def _slot_map(house: ThermalHouse, slot_h: float, sub_h: float):
    """Coefficients of the exact Euler composition over one slot.

    With ``m`` sub-steps of length ``h`` and ``a = 1 - h alpha`` the end
    temperature is ``a**m theta0 + (1 - a**m) ambient - (1 - a**m) c u / alpha``.
    """
    m = max(1, int(round(slot_h / sub_h)))
    h = slot_h / m
    a = 1.0 - h * house.alpha
    am = a**m
    return am, (1.0 - am), (1.0 - am) * house.cooling_rate / house.alpha


def _temperature_rows(house, ambient, slot_h, sub_h):
    """Temperatures at slot ends as ``const[t] + G[t] @ u`` for this house."""
    T = len(ambient)
    am, amb_gain, u_gain = _slot_map(house, slot_h, sub_h)
    const = np.empty(T)
    G = np.zeros((T, T))
    prev_c, prev_g = house.temp, np.zeros(T)
    for t in range(T):
        c = am * prev_c + amb_gain * ambient[t]
        g = am * prev_g
        g[t] -= u_gain
        const[t], G[t] = c, g
        prev_c, prev_g = c, g
    return const, G


def lp_relaxed_schedule(
    houses: Sequence[ThermalHouse],
    price,
    ambient,
    energy: float,
    horizon_h: float | None = None,
    slot_h: float = 1.0,
    *,
    physics_step_h: float = PHYSICS_STEP_H,
) -> FleetPlan:
    """Cheapest relaxed fleet schedule delivering exactly ``energy`` kWh.

    Comfort bands are enforced at every slot boundary; within a slot the
    temperature moves monotonically toward a fixed point, so the boundary
    checks cover the whole trajectory. A cost perturbation of relative size
    1e-9 growing with slot index breaks ties toward earlier slots.
    """
    price = np.asarray(price, dtype=float)
    ambient = np.asarray(ambient, dtype=float)
    T = price.size
    if horizon_h is not None and abs(T * slot_h - horizon_h) > 1e-9:
        raise ValueError("price/ambient length times slot_h must equal the horizon")
    if ambient.size != T:
        raise ValueError("price and ambient forecasts must have the same length")
    N = len(houses)
    if N == 0:
        raise ValueError("at least one house is required")
    for h in houses:
        if physics_step_h > 0.1 / h.alpha * (1 + 1e-12):
            raise ValueError(f"house {h.id}: physics step exceeds 0.1/alpha")
        if not h.comfort_low <= h.temp <= h.comfort_high:
            raise InfeasibleError(
                f"house {h.id} starts at {h.temp} C, outside its comfort band", "comfort", house=h.id, time_h=0.0
            )

    rows = [_temperature_rows(h, ambient, slot_h, physics_step_h) for h in houses]
    for h in houses:
        _check_house(h, ambient, slot_h, physics_step_h)

    nv = N * T
    scale = float(np.max(np.abs(price))) if np.any(price) else 1.0
    c = np.zeros(nv)
    for n, h in enumerate(houses):
        for t in range(T):
            c[n * T + t] = h.ac_power * price[t] * slot_h + TIE_BREAK * scale * h.ac_power * (t * N + n + 1)
    A_ub, b_ub, A_eq = _comfort_rows(houses, rows, slot_h)
    try:
        res = solve_lp(c, A_ub, b_ub, A_eq, [energy], (0.0, 1.0))
    except InfeasibleError:
        raise InfeasibleError(
            f"energy budget {energy} kWh cannot be delivered within the comfort bands", "energy"
        ) from None
    u = np.clip(res.x.reshape(N, T), 0.0, 1.0)
    p = np.array([h.ac_power for h in houses])
    temps = np.empty((N, T + 1))
    for n, h in enumerate(houses):
        const, G = rows[n]
        temps[n, 0] = h.temp
        temps[n, 1:] = const + G @ u[n]
    cost = float(np.sum(p[:, None] * price[None, :] * u) * slot_h)
    return FleetPlan(
        u=u,
        p_ref=p @ u,
        energy=energy,
        price=price,
        ambient=ambient,
        slot_h=slot_h,
        cost=cost,
        temps=temps,
    )


def _comfort_rows(houses, rows, slot_h):
    N, T = len(houses), rows[0][0].size
    nv = N * T
    A_ub, b_ub = [], []
    for n, h in enumerate(houses):
        const, G = rows[n]
        for t in range(T):
            row = np.zeros(nv)
            row[n * T : (n + 1) * T] = G[t]
            A_ub.append(row)
            b_ub.append(h.comfort_high - const[t])
            A_ub.append(-row)
            b_ub.append(const[t] - h.comfort_low)
    A_eq = np.zeros((1, nv))
    for n, h in enumerate(houses):
        A_eq[0, n * T : (n + 1) * T] = h.ac_power * slot_h
    return np.array(A_ub), np.array(b_ub), A_eq


def feasible_energy_range(
    houses: Sequence[ThermalHouse],
    ambient,
    slot_h: float = 1.0,
    *,
    physics_step_h: float = PHYSICS_STEP_H,
) -> tuple[float, float]:
    """Smallest and largest fleet energy (kWh) compatible with every comfort band."""
    ambient = np.asarray(ambient, dtype=float)
    rows = [_temperature_rows(h, ambient, slot_h, physics_step_h) for h in houses]
    for h in houses:
        _check_house(h, ambient, slot_h, physics_step_h)
    A_ub, b_ub, A_eq = _comfort_rows(houses, rows, slot_h)
    lo = solve_lp(A_eq[0], A_ub, b_ub, bounds=(0.0, 1.0)).fun
    hi = -solve_lp(-A_eq[0], A_ub, b_ub, bounds=(0.0, 1.0)).fun
    return lo, hi


def _check_house(h: ThermalHouse, ambient, slot_h, sub_h):
    """Locate the first slot where this house cannot stay comfortable at any duty cycle.

    The set of reachable comfortable temperatures is an interval at every
    slot boundary because the slot map is monotone in both the start
    temperature and the duty cycle; it is propagated forward until empty.
    """
    am, amb_gain, u_gain = _slot_map(h, slot_h, sub_h)
    lo = hi = h.temp
    for t, amb in enumerate(ambient):
        lo, hi = am * lo + amb_gain * amb - u_gain, am * hi + amb_gain * amb
        lo, hi = max(lo, h.comfort_low), min(hi, h.comfort_high)
        if lo > hi + 1e-12:
            raise InfeasibleError(
                f"house {h.id} cannot stay within [{h.comfort_low}, {h.comfort_high}] C "
                f"by t = {(t + 1) * slot_h:g} h",
                "comfort",
                house=h.id,
                time_h=(t + 1) * slot_h,
            )


@dataclass(frozen=True)
class TrackingController:
    """Broadcast PI on the power error normalized by fleet rated power.

    ``v = kp * e + ki * integral(e dt)`` with ``e = (P_ref - P_total) / P_max``
    in per unit of rated fleet power; ``v`` is in degrees C of setpoint
    shift. A positive ``v`` lowers setpoints and brings more ACs on.
    """

    kp: float = 1.0
    ki: float = 2.0
    integral: float = 0.0
    command: float = 0.0


def thermostat(house: ThermalHouse, ambient: float, dt: float) -> bool:
    """Hysteresis decision with a one-step comfort guard."""
    on = house.on
    if house.temp > house.setpoint + house.deadband:
        on = True
    elif house.temp < house.setpoint - house.deadband:
        on = False
    hi = house.comfort_high + house.deadband
    lo = house.comfort_low - house.deadband
    if not on and thermal_step(house, ambient, False, dt) > hi:
        on = True
    elif on and thermal_step(house, ambient, True, dt) < lo:
        on = False
    return on


def tracking_step(
    fleet: Sequence[ThermalHouse],
    p_ref: float,
    p_total: float,
    controller: TrackingController,
    ambient: float = 25.0,
    dt: float = PHYSICS_STEP_H,
) -> tuple[float, list[ThermalHouse], TrackingController]:
    """Broadcast one command and let each thermostat react.

    Returns the command, the houses with new setpoints and on/off states
    (temperatures unchanged) and the updated controller.
    """
    if not fleet:
        raise ValueError("fleet is empty")
    p_max = sum(h.ac_power for h in fleet)
    e = (p_ref - p_total) / p_max if p_max > 0 else 0.0
    integral = controller.integral + e * dt
    v = controller.kp * e + controller.ki * integral
    out = []
    for h in fleet:
        s = min(max(h.setpoint - v, h.comfort_low), h.comfort_high)
        h2 = replace(h, setpoint=s)
        out.append(replace(h2, on=thermostat(h2, ambient, dt)))
    return v, out, replace(controller, integral=integral, command=v)


@dataclass(frozen=True)
class TrackingRun:
    times: np.ndarray
    p_ref: np.ndarray
    p_total: np.ndarray
    command: np.ndarray
    temps: np.ndarray
    """Indoor temperatures at the start of each step, shape ``(steps + 1, n_house)``."""
    energy: float
    fleet_power: float

    @property
    def mean_abs_error(self) -> float:
        return float(np.mean(np.abs(self.p_total - self.p_ref)))


class FleetTracker:
    """Layer-2 closed loop advanced one physics step at a time."""

    def __init__(
        self,
        fleet: Sequence[ThermalHouse],
        plan: FleetPlan,
        controller: TrackingController = TrackingController(),
        dt: float = PHYSICS_STEP_H,
    ):
        self.houses = list(fleet)
        self.plan = plan
        self.controller = controller
        self.dt = dt
        self.k = 0
        self.energy = 0.0
        self.p_total = sum(h.ac_power for h in self.houses if h.on)
        self.fleet_power = sum(h.ac_power for h in self.houses)

    @property
    def steps(self) -> int:
        return int(round(self.plan.p_ref.size * self.plan.slot_h / self.dt))

    def step(self) -> dict[str, float]:
        """Broadcast, switch, then integrate; returns the signals of this step."""
        t = self.k * self.dt
        plan = self.plan
        slot = min(int(math.floor(t / plan.slot_h + 1e-9)), plan.ambient.size - 1)
        amb = float(plan.ambient[slot])
        ref = float(plan.p_ref[slot])
        temps = [h.temp for h in self.houses]
        v, houses, self.controller = tracking_step(self.houses, ref, self.p_total, self.controller, amb, self.dt)
        self.p_total = sum(h.ac_power for h in houses if h.on)
        self.energy += self.p_total * self.dt
        self.houses = [replace(h, temp=thermal_step(h, amb, h.on, self.dt)) for h in houses]
        self.k += 1
        return {"t": t, "p_ref": ref, "p_total": self.p_total, "v": v, "temps": temps}


def simulate_tracking(
    fleet: Sequence[ThermalHouse],
    plan: FleetPlan,
    controller: TrackingController = TrackingController(),
    dt: float = PHYSICS_STEP_H,
) -> TrackingRun:
    """Closed loop over the plan's horizon at the physics step."""
    tr = FleetTracker(fleet, plan, controller, dt)
    rows = [tr.step() for _ in range(tr.steps)]
    temps = [r["temps"] for r in rows] + [[h.temp for h in tr.houses]]
    return TrackingRun(
        times=np.array([r["t"] for r in rows]),
        p_ref=np.array([r["p_ref"] for r in rows]),
        p_total=np.array([r["p_total"] for r in rows]),
        command=np.array([r["v"] for r in rows]),
        temps=np.array(temps),
        energy=tr.energy,
        fleet_power=tr.fleet_power,
    )


def generate_fleet(n: int, seed: int, *, comfort=(21.0, 25.0)) -> list[ThermalHouse]:
    """Heterogeneous fleet drawn from the counter-based generator.

    alpha in [0.2, 0.4] 1/h, beta in [0.8, 1.2] C/kWh, AC power in
    [2.5, 4] kW with efficiency 2.5, start temperature in [22, 24] C and
    roughly 30% of units initially running.
    """
    from .rng import CounterRng

    u = CounterRng(seed, "fleet").uniform(5 * n).reshape(n, 5)
    return [
        ThermalHouse(
            i,
            alpha=0.2 + 0.2 * u[i, 0],
            beta=0.8 + 0.4 * u[i, 1],
            comfort_low=comfort[0],
            comfort_high=comfort[1],
            temp=22.0 + 2.0 * u[i, 2],
            ac_power=2.5 + 1.5 * u[i, 3],
            efficiency=2.5,
            on=bool(u[i, 4] < 0.3),
        )
        for i in range(n)
    ]
