"""EV charging coordination and charging-station placement.

Charging minimizes the valley-filling objective ``sum_k (D[k] + sum_n
w_n[k])**2`` subject to per-EV boxes and energy equalities. The centralized
solver and the aggregator/charger protocol run the same projected-gradient
map; in the protocol each charger only sees the broadcast price.

Slots are 0-based and the charging window ``[k_start, k_end]`` is
inclusive. Power is in kW, energy in kWh, slot length ``dk`` in hours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Mapping, Sequence

import numpy as np

from .errors import ConvergenceError, InfeasibleError
from .grid import Network, Topology, lindistflow_solve

ENERGY_TOL = 1e-6
BISECT_TOL = 1e-10


@dataclass(frozen=True)
class EvSession:
    id: int | str
    k_start: int
    k_end: int
    rate_max: float
    efficiency: float = 1.0
    battery_capacity: float = 0.0
    soc_start: float = 0.0
    soc_end: float = 0.0

    def __post_init__(self):
        if not 0 <= self.k_start <= self.k_end:
            raise ValueError(f"EV {self.id}: need 0 <= k_start <= k_end")
        if not 0 < self.efficiency <= 1:
            raise ValueError(f"EV {self.id}: efficiency must be in (0, 1]")
        if not (0 <= self.soc_start <= self.soc_end <= 1):
            raise ValueError(f"EV {self.id}: need 0 <= soc_start <= soc_end <= 1")
        if self.rate_max < 0 or self.battery_capacity < 0:
            raise ValueError(f"EV {self.id}: rate_max and battery_capacity must be >= 0")

    def required_energy(self) -> float:
        """Grid-side kWh needed to reach ``soc_end``."""
        return self.battery_capacity * (self.soc_end - self.soc_start) / self.efficiency

    def window_slots(self) -> int:
        return self.k_end - self.k_start + 1


@dataclass(frozen=True)
class ChargingProfile:
    rates: np.ndarray
    """Rates in kW, shape ``(n_ev, K)``."""
    ids: tuple = ()
    iterations: int = 0

    def aggregate(self, base_load) -> np.ndarray:
        return np.asarray(base_load, dtype=float) + self.rates.sum(axis=0)


def charging_bound(session: EvSession, k: int) -> float:
    """Rate cap in slot ``k``: ``rate_max`` inside the window, 0 outside."""
    return session.rate_max if session.k_start <= k <= session.k_end else 0.0


def _upper(session: EvSession, K: int) -> np.ndarray:
    return np.array([charging_bound(session, k) for k in range(K)])


def _slot_total(session: EvSession, dk: float) -> float:
    """Required ``sum_k w[k]`` in kW-slots."""
    return session.required_energy() / dk


def check_session(session: EvSession, K: int, dk: float) -> None:
    if session.k_end >= K:
        raise InfeasibleError(
            f"EV {session.id}: window ends at slot {session.k_end}, horizon has {K} slots",
            "window",
            session=session.id,
        )
    need = _slot_total(session, dk)
    cap = session.rate_max * session.window_slots()
    if need > cap * (1 + 1e-12) + ENERGY_TOL:
        raise InfeasibleError(
            f"EV {session.id}: needs {need * dk:.6g} kWh but can draw at most {cap * dk:.6g} kWh",
            "energy",
            session=session.id,
        )


def ev_local_project(target, session: EvSession, dk: float = 1.0) -> np.ndarray:
    """Closest profile to ``target`` in the session's box with the required energy.

    The minimizer is ``clip(target + mu, 0, ub)``; the multiplier ``mu`` is
    found by bisection and the free slots are then levelled exactly so the
    energy equality holds to rounding.
    """
    t = np.asarray(target, dtype=float)
    K = t.size
    check_session(session, K, dk)
    ub = _upper(session, K)
    S = _slot_total(session, dk)
    if S <= 0:
        return np.zeros(K)
    cap = float(ub.sum())
    if S >= cap * (1 - 1e-15):
        return ub.copy()
    inside = ub > 0
    lo = -float(np.max(t[inside])) - 1e-12
    hi = float(np.max(ub) - np.min(t[inside])) + 1e-12

    def total(mu):
        return float(np.clip(t + mu, 0.0, ub).sum())

    while hi - lo > BISECT_TOL * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if total(mid) < S:
            lo = mid
        else:
            hi = mid
    mu = 0.5 * (lo + hi)
    w = np.clip(t + mu, 0.0, ub)
    free = inside & (w > 0) & (w < ub)
    if free.any():
        fixed_sum = float(w[~free].sum())
        ref = t[free][0]
        dev = t[free] - ref
        level = (S - fixed_sum - float(dev.sum())) / int(free.sum())
        w_free = dev + level
        if np.all(w_free >= 0) and np.all(w_free <= ub[free]):
            w[free] = w_free
    return w


def valley_objective(rates, base_load) -> float:
    agg = np.asarray(base_load, dtype=float) + np.asarray(rates).sum(axis=0)
    return float(agg @ agg)


def _initial(sessions, K, dk):
    return np.array([ev_local_project(np.zeros(K), s, dk) for s in sessions]).reshape(len(sessions), K)


def centralized_schedule(
    sessions: Sequence[EvSession],
    base_load,
    K: int | None = None,
    dk: float = 1.0,
    *,
    tol: float = 1e-12,
    max_iters: int = 200_000,
) -> ChargingProfile:
    """Projected gradient on the joint problem until the objective stops falling by ``tol``.

    The default is far below the accuracy the objective itself needs because
    the aggregate profile converges more slowly than its squared norm.
    """
    D = np.asarray(base_load, dtype=float)
    K = D.size if K is None else K
    if D.size != K:
        raise ValueError("base_load length must equal K")
    n = len(sessions)
    if n == 0:
        return ChargingProfile(np.zeros((0, K)))
    w = _initial(sessions, K, dk)
    step = 1.0 / (2.0 * n)
    f = valley_objective(w, D)
    for it in range(1, max_iters + 1):
        grad = 2.0 * (D + w.sum(axis=0))
        w = np.array([ev_local_project(w[i] - step * grad, s, dk) for i, s in enumerate(sessions)])
        f_new = valley_objective(w, D)
        if f - f_new < tol:
            return ChargingProfile(w, tuple(s.id for s in sessions), it)
        f = f_new
    raise ConvergenceError("centralized schedule did not converge", f, max_iters)


def decentralized_schedule(
    sessions: Sequence[EvSession],
    base_load,
    K: int | None = None,
    dk: float = 1.0,
    step: float | None = None,
    max_iters: int = 200_000,
    *,
    tol: float = 1e-6,
) -> ChargingProfile:
    """Aggregator/charger price protocol in synchronous rounds.

    Each round the aggregator broadcasts ``p[k] = 2 (D[k] + sum_n w_n[k])``
    and every charger answers with the minimizer of
    ``step * p @ w + 0.5 * ||w - w_prev||**2`` over its own constraint set.
    Rounds stop when no rate moves by more than ``tol`` kW. The default step
    ``1 / (2 N)`` keeps the joint iteration contractive.
    """
    D = np.asarray(base_load, dtype=float)
    K = D.size if K is None else K
    if D.size != K:
        raise ValueError("base_load length must equal K")
    n = len(sessions)
    if n == 0:
        return ChargingProfile(np.zeros((0, K)))
    gamma = 1.0 / (2.0 * n) if step is None else step
    if not gamma > 0:
        raise ValueError("step must be positive")
    w = _initial(sessions, K, dk)
    change = math.inf
    for it in range(1, max_iters + 1):
        price = 2.0 * (D + w.sum(axis=0))
        new = np.array([ev_local_project(w[i] - gamma * price, s, dk) for i, s in enumerate(sessions)])
        change = float(np.max(np.abs(new - w)))
        w = new
        if change < tol:
            return ChargingProfile(w, tuple(s.id for s in sessions), it)
    raise ConvergenceError(
        f"decentralized protocol did not converge in {max_iters} rounds (last change {change:.3g} kW)",
        change,
        max_iters,
    )


def greedy_schedule(sessions: Sequence[EvSession], K: int, dk: float = 1.0) -> ChargingProfile:
    """Uncoordinated charging: full rate from arrival until the energy is delivered."""
    rates = np.zeros((len(sessions), K))
    for i, s in enumerate(sessions):
        check_session(s, K, dk)
        left = _slot_total(s, dk)
        for k in range(s.k_start, s.k_end + 1):
            take = min(s.rate_max, left)
            rates[i, k] = take
            left -= take
            if left <= 0:
                break
    return ChargingProfile(rates, tuple(s.id for s in sessions))


# ----------------------------------------------------------- station placement


@dataclass(frozen=True)
class PlacementProblem:
    """Charging-station siting on a radial feeder.

    Base loads are the negated bus injections of ``net`` (per unit on
    ``base_kva``). Station power ``spot_power * y`` is added as real load.
    """

    net: Network
    candidates: tuple[int, ...]
    fixed_cost: Mapping[int, float]
    per_spot_cost: float
    spot_power: float
    demand_floor: float
    budget: float
    v_min: float = 0.95
    v_max: float = 1.05
    y_max: int = 20
    base_kva: float = 1000.0
    current_check: bool = True
    _fixed: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if self.net.topology is not Topology.RADIAL_DISTRIBUTION:
            raise ValueError("placement needs a radial_distribution network")
        if self.demand_floor < 0 or self.budget < 0:
            raise ValueError("demand_floor and budget must be non-negative")
        if not self.spot_power > 0:
            raise ValueError("spot_power must be positive")
        if len(self.candidates) > 12:
            raise ValueError("at most 12 candidate nodes are supported")
        if self.y_max < 0:
            raise ValueError("y_max must be non-negative")
        for c in self.candidates:
            self.net.index(c)
        object.__setattr__(self, "_fixed", tuple(float(self.fixed_cost[c]) for c in self.candidates))


@dataclass(frozen=True)
class Placement:
    x: tuple[int, ...]
    y: tuple[int, ...]
    cost: float
    voltage_sq: np.ndarray
    candidates: tuple[int, ...] = ()


def placement_check(prob: PlacementProblem, y: Sequence[int], *, currents: bool | None = None) -> str | None:
    """Name the violated network constraint class for spot counts ``y``, or None."""
    net = prob.net
    p = np.array([-b.p_inject for b in net.buses])
    q = np.array([-b.q_inject for b in net.buses])
    for c, yi in zip(prob.candidates, y):
        p[net.index(c)] += yi * prob.spot_power / prob.base_kva
    res = lindistflow_solve(net, p, q)
    tol = 1e-12
    if np.any(res.voltage_sq < prob.v_min**2 - tol) or np.any(res.voltage_sq > prob.v_max**2 + tol):
        return "voltage"
    if prob.current_check if currents is None else currents:
        for ln, pf, qf in zip(net.lines, res.p_flow, res.q_flow):
            if not ln.apparent_flow_ok(pf, qf):
                return "current"
    return None


def evcs_place(prob: PlacementProblem) -> Placement:
    """Least-cost siting by branch and bound over the open/closed pattern.

    Spots are identical, so every pattern needs exactly
    ``Y = ceil(S / p_spot)`` spots; extra spots add cost and load. For a
    pattern, spots are assigned depth-first with the smallest count first,
    pruning partial assignments that already violate a network limit
    (adding load never relieves one). Ties between equal-cost patterns go to
    the lexicographically smallest ``(x, y)``.
    """
    n = len(prob.candidates)
    Y = math.ceil(prob.demand_floor / prob.spot_power - 1e-12) if prob.demand_floor > 0 else 0
    if n * prob.y_max < Y:
        raise InfeasibleError(
            f"demand floor {prob.demand_floor} kW exceeds the capacity of all candidates "
            f"({n * prob.y_max * prob.spot_power} kW)",
            "demand_floor",
        )
    best = _search(prob, Y)
    if best is None:
        kind = "voltage"
        if prob.current_check and _search(prob, Y, currents=False) is not None:
            kind = "current"
        raise InfeasibleError(f"no placement satisfies the feeder's {kind} limits", kind)
    if best.cost > prob.budget + 1e-9:
        raise InfeasibleError(
            f"cheapest feasible placement costs {best.cost:.6g} $, above the budget {prob.budget:.6g} $",
            "budget",
            min_cost=best.cost,
        )
    return best


def _search(prob: PlacementProblem, Y: int, currents: bool | None = None) -> Placement | None:
    n = len(prob.candidates)
    f = prob._fixed
    best: Placement | None = None
    if Y == 0 and placement_check(prob, [0] * n, currents=currents) is None:
        return _make(prob, (0,) * n, (0,) * n)
    for x in product((0, 1), repeat=n):
        opened = [i for i in range(n) if x[i]]
        if len(opened) * prob.y_max < Y:
            continue
        bound = sum(fi for fi, xi in zip(f, x) if xi) + prob.per_spot_cost * Y
        if best is not None and bound > best.cost + 1e-9:
            continue
        y = _assign(prob, opened, Y, currents)
        if y is None:
            continue
        cand = _make(prob, x, y)
        if best is None or cand.cost < best.cost - 1e-9:
            best = cand
    return best


def _assign(prob, opened, Y, currents):
    n = len(prob.candidates)
    y = [0] * n

    def dfs(j, remaining):
        if j == len(opened):
            return remaining == 0
        room_after = (len(opened) - j - 1) * prob.y_max
        for v in range(max(0, remaining - room_after), min(prob.y_max, remaining) + 1):
            y[opened[j]] = v
            if placement_check(prob, y, currents=currents) is None and dfs(j + 1, remaining - v):
                return True
        y[opened[j]] = 0
        return False

    return tuple(y) if dfs(0, Y) else None


def _make(prob, x, y):
    cost = sum(fi for fi, xi in zip(prob._fixed, x) if xi) + prob.per_spot_cost * sum(y)
    net = prob.net
    p = np.array([-b.p_inject for b in net.buses])
    q = np.array([-b.q_inject for b in net.buses])
    for c, yi in zip(prob.candidates, y):
        p[net.index(c)] += yi * prob.spot_power / prob.base_kva
    res = lindistflow_solve(net, p, q)
    return Placement(tuple(x), tuple(y), float(cost), res.voltage_sq, prob.candidates)
