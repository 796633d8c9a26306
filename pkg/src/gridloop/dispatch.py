"""Market-timescale loops: economic dispatch, unit commitment, scenario dispatch.

Powers are in MW and prices in $/MWh. When a :class:`~gridloop.grid.Network`
is supplied its line limits (per unit) are scaled by ``base_mva``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InfeasibleError
from .grid import Network, Topology
from .lp import solve_lp

REALTIME_DISPATCH_PERIOD_S = 300.0
MAX_UC_HOURS = 24
MAX_UC_UNITS = 10
_TIE_TOL = 1e-9


@dataclass(frozen=True)
class Generator:
    """A dispatchable unit.

    ``marginal_cost`` is either a constant $/MWh or up to three
    ``(upper_mw, $/MWh)`` segments with non-decreasing costs; the last
    breakpoint must equal ``p_max``. Cost is the integral of marginal cost
    from zero, so a unit producing ``p`` with constant cost ``c`` costs
    ``c * p`` per hour.
    """

    id: str
    bus: int
    marginal_cost: float | tuple[tuple[float, float], ...]
    p_min: float = 0.0
    p_max: float = 0.0
    startup_cost: float = 0.0
    committed: bool = True

    def __post_init__(self):
        if not 0 <= self.p_min <= self.p_max:
            raise ValueError(f"generator {self.id}: need 0 <= p_min <= p_max")
        segs = self.segments()
        if len(segs) > 3:
            raise ValueError(f"generator {self.id}: at most 3 cost segments")
        costs = [c for _, c in segs]
        if any(b < a for a, b in zip(costs, costs[1:])):
            raise ValueError(f"generator {self.id}: segment costs must be non-decreasing")

    def segments(self) -> list[tuple[float, float]]:
        """``(width_mw, cost)`` pairs covering ``[0, p_max]``."""
        if np.isscalar(self.marginal_cost):
            return [(self.p_max, float(self.marginal_cost))]
        out, prev = [], 0.0
        for upper, cost in self.marginal_cost:
            if upper < prev:
                raise ValueError(f"generator {self.id}: breakpoints must increase")
            out.append((upper - prev, float(cost)))
            prev = upper
        if not math.isclose(prev, self.p_max, abs_tol=1e-9):
            raise ValueError(f"generator {self.id}: last breakpoint must equal p_max")
        return out

    def cost(self, p: float) -> float:
        total, left = 0.0, p
        for width, c in self.segments():
            take = min(width, max(left, 0.0))
            total += take * c
            left -= take
        return total


@dataclass
class DispatchResult:
    outputs: dict[str, float]
    total_cost: float
    lmp: dict[int, float]
    binding_lines: list[int] = field(default_factory=list)
    flows_mw: list[float] = field(default_factory=list)
    dropped_scenarios: tuple[int, ...] = ()


@dataclass
class CommitmentSchedule:
    unit_ids: list[str]
    on: list[tuple[int, ...]]
    """Per hour, the on/off flag of every unit (ordered like ``unit_ids``)."""
    dispatch: list[dict[str, float]]
    total_cost: float
    energy_cost: float
    startup_cost: float


def _bus_demand(demand, net: Network | None) -> np.ndarray:
    """Demand vector over buses; a scalar lands on the slack bus."""
    if net is None:
        total = sum(demand.values()) if isinstance(demand, Mapping) else float(demand)
        return np.array([total])
    d = np.zeros(net.n_bus)
    if isinstance(demand, Mapping):
        for bus_id, mw in demand.items():
            d[net.index(bus_id)] += mw
    else:
        d[net.slack_index] = float(demand)
    return d


class _DispatchLP:
    """Builder for dispatch LPs over one or more demand scenarios.

    Variable layout: generator segments (shared), then per scenario the
    non-slack bus angles and, if requested, a bounded shortfall and a free
    spill at the slack bus.
    """

    def __init__(self, gens, net, base_mva, demands, shortfall_cost=None, reserve_mw=0.0):
        self.gens = [g for g in gens if g.committed]
        self.net = net
        self.base = base_mva
        self.demands = demands
        self.n_s = len(demands)
        self.with_reserve = shortfall_cost is not None

        self.seg_index = []
        c, bounds = [], []
        for g in self.gens:
            idx = []
            for width, cost in g.segments():
                idx.append(len(c))
                c.append(cost)
                bounds.append((0.0, width))
            self.seg_index.append(idx)
        n_bus = 1 if net is None else net.n_bus
        slack = 0 if net is None else net.slack_index
        self.theta_index = []
        self.reserve_index = []
        for _ in range(self.n_s):
            th = {}
            if net is not None:
                for i in range(n_bus):
                    if i != slack:
                        th[i] = len(c)
                        c.append(0.0)
                        bounds.append((None, None))
            self.theta_index.append(th)
            if self.with_reserve:
                r = len(c)
                c.append(shortfall_cost / self.n_s)
                bounds.append((0.0, reserve_mw))
                c.append(0.0)
                bounds.append((0.0, None))
                self.reserve_index.append(r)
        nv = len(c)
        self.c = np.array(c)
        self.bounds = bounds

        A_eq, b_eq, A_ub, b_ub = [], [], [], []
        self.line_rows = []
        for s, d in enumerate(demands):
            for i in range(n_bus):
                row = np.zeros(nv)
                for g, idx in zip(self.gens, self.seg_index):
                    at = 0 if net is None else net.index(g.bus)
                    if at == i:
                        row[idx] = 1.0
                if net is not None:
                    for ln in net.lines:
                        f, t = net.index(ln.from_bus), net.index(ln.to_bus)
                        if i not in (f, t):
                            continue
                        sgn = 1.0 if i == f else -1.0
                        coef = self.base * ln.susceptance
                        # outgoing flow b (theta_f - theta_t) leaves bus i
                        if f in self.theta_index[s]:
                            row[self.theta_index[s][f]] -= sgn * coef
                        if t in self.theta_index[s]:
                            row[self.theta_index[s][t]] += sgn * coef
                if self.with_reserve and i == slack:
                    r = self.reserve_index[s]
                    row[r] = 1.0
                    row[r + 1] = -1.0
                A_eq.append(row)
                b_eq.append(d[i])
            if net is not None:
                rows = []
                for ln in net.lines:
                    if not math.isfinite(ln.flow_limit):
                        rows.append(None)
                        continue
                    f, t = net.index(ln.from_bus), net.index(ln.to_bus)
                    row = np.zeros(nv)
                    coef = self.base * ln.susceptance
                    if f in self.theta_index[s]:
                        row[self.theta_index[s][f]] += coef
                    if t in self.theta_index[s]:
                        row[self.theta_index[s][t]] -= coef
                    lim = ln.flow_limit * self.base
                    rows.append(len(A_ub))
                    A_ub.append(row)
                    b_ub.append(lim)
                    A_ub.append(-row)
                    b_ub.append(lim)
                self.line_rows.append(rows)
        for g, idx in zip(self.gens, self.seg_index):
            if g.p_min > 0:
                row = np.zeros(nv)
                row[idx] = -1.0
                A_ub.append(row)
                b_ub.append(-g.p_min)
        self.A_eq = np.array(A_eq).reshape(-1, nv)
        self.b_eq = np.array(b_eq)
        self.A_ub = np.array(A_ub).reshape(-1, nv)
        self.b_ub = np.array(b_ub)
        self.n_bus = n_bus

    def solve(self):
        return solve_lp(
            self.c,
            self.A_ub if len(self.b_ub) else None,
            self.b_ub if len(self.b_ub) else None,
            self.A_eq,
            self.b_eq,
            self.bounds,
        )

    def outputs(self, x) -> dict[str, float]:
        return {g.id: float(np.sum(x[idx])) for g, idx in zip(self.gens, self.seg_index)}

    def flows(self, x, s) -> list[float]:
        if self.net is None:
            return []
        th = np.zeros(self.n_bus)
        for i, k in self.theta_index[s].items():
            th[i] = x[k]
        return [
            self.base * ln.susceptance * (th[self.net.index(ln.from_bus)] - th[self.net.index(ln.to_bus)])
            for ln in self.net.lines
        ]


def _check_network(net):
    if net is not None and net.topology is not Topology.MESHED_TRANSMISSION:
        raise ValueError("dispatch requires a meshed_transmission network")


def _capacity_checks(gens, total, label=""):
    on = [g for g in gens if g.committed]
    cap = sum(g.p_max for g in on)
    floor = sum(g.p_min for g in on)
    if total > cap + 1e-9:
        raise InfeasibleError(
            f"{label}demand {total:.6g} MW exceeds committed capacity {cap:.6g} MW",
            "capacity",
            demand=total,
            capacity=cap,
        )
    if total < floor - 1e-9:
        raise InfeasibleError(
            f"{label}demand {total:.6g} MW is below committed minimum generation {floor:.6g} MW",
            "min_generation",
            demand=total,
            min_generation=floor,
        )


def economic_dispatch(
    gens: Sequence[Generator],
    demand: float | Mapping[int, float],
    net: Network | None = None,
    *,
    base_mva: float = 100.0,
) -> DispatchResult:
    """Least-cost dispatch of committed units against ``demand``.

    Without a network the system is a single copper-plate bus. LMPs are the
    balance-constraint duals, i.e. the cost of one more MW at each bus.
    """
    _check_network(net)
    d = _bus_demand(demand, net)
    _capacity_checks(gens, float(d.sum()))
    lp = _DispatchLP(gens, net, base_mva, [d])
    try:
        res = lp.solve()
    except InfeasibleError as exc:
        raise InfeasibleError(
            "no dispatch satisfies the line flow limits", "line_limit"
        ) from exc
    return _result(lp, res, gens, net, res.eq_duals)


def _result(lp, res, gens, net, duals, dropped=()):
    out = {g.id: 0.0 for g in gens}
    out.update(lp.outputs(res.x))
    if net is None:
        lmp = {0: float(sum(duals[k * lp.n_bus] for k in range(lp.n_s)))}
    else:
        lmp = {
            b.id: float(sum(duals[k * lp.n_bus + i] for k in range(lp.n_s)))
            for i, b in enumerate(net.buses)
        }
    flows, binding = [], []
    if net is not None:
        flows = lp.flows(res.x, 0)
        for k, ln in enumerate(net.lines):
            limit = ln.flow_limit * lp.base
            if any(abs(f) >= limit - 1e-6 for f in (lp.flows(res.x, s)[k] for s in range(lp.n_s))):
                binding.append(k)
    return DispatchResult(
        outputs=out,
        total_cost=float(res.fun),
        lmp=lmp,
        binding_lines=binding,
        flows_mw=flows,
        dropped_scenarios=tuple(dropped),
    )


def merit_order_dispatch(gens: Sequence[Generator], demand: float) -> tuple[dict[str, float], float]:
    """Closed-form copper-plate dispatch: minimum outputs, then cheapest segments.

    Exact for convex piecewise-linear costs; used by unit commitment where
    thousands of single-bus dispatches are needed.
    """
    on = [g for g in gens if g.committed]
    _capacity_checks(on, demand)
    out = {g.id: 0.0 for g in gens}
    for g in on:
        out[g.id] = g.p_min
    left = demand - sum(g.p_min for g in on)
    pieces = []
    for order, g in enumerate(on):
        lo = 0.0
        for width, c in g.segments():
            hi = lo + width
            avail = hi - max(lo, g.p_min)
            if avail > 0:
                pieces.append((c, order, g.id, avail))
            lo = hi
    for c, _, gid, avail in sorted(pieces):
        if left <= 0:
            break
        take = min(avail, left)
        out[gid] += take
        left -= take
    cost = sum(g.cost(out[g.id]) for g in on)
    return out, cost


def unit_commitment(
    gens: Sequence[Generator],
    hourly_demand: Sequence[float | Mapping[int, float]],
    net: Network | None = None,
    *,
    base_mva: float = 100.0,
    initial_on: Sequence[bool] | None = None,
) -> CommitmentSchedule:
    """Globally optimal commitment by dynamic programming over hourly states.

    Hours couple only through startup costs, so a backward pass over all
    ``2**units`` commitment states with an economic dispatch per
    ``(hour, state)`` is exact. Among optimal schedules the forward pass
    picks the lexicographically smallest hour-major on/off vector.
    """
    _check_network(net)
    units = list(gens)
    U, H = len(units), len(hourly_demand)
    if H > MAX_UC_HOURS or U > MAX_UC_UNITS:
        raise ValueError(f"unit commitment limited to {MAX_UC_UNITS} units x {MAX_UC_HOURS} hours")
    states = list(itertools.product((0, 1), repeat=U))
    S = len(states)
    state_arr = np.array(states, dtype=float).reshape(S, U)
    startup = np.array([g.startup_cost for g in units])
    # trans[a, b]: startup cost going from state a to state b
    trans = ((1.0 - state_arr)[:, None, :] * state_arr[None, :, :]) @ startup
    prev = np.zeros(U) if initial_on is None else np.array(initial_on, dtype=float)
    init_trans = ((1.0 - prev)[None, :] * state_arr) @ startup

    energy = np.full((H, S), np.inf)
    dispatch: dict[tuple[int, int], dict[str, float]] = {}
    for h, dem in enumerate(hourly_demand):
        for s, st in enumerate(states):
            committed = [
                Generator(g.id, g.bus, g.marginal_cost, g.p_min, g.p_max, g.startup_cost, bool(on))
                for g, on in zip(units, st)
            ]
            try:
                if net is None:
                    total = float(sum(dem.values())) if isinstance(dem, Mapping) else float(dem)
                    out, cost = merit_order_dispatch(committed, total)
                else:
                    r = economic_dispatch(committed, dem, net, base_mva=base_mva)
                    out, cost = r.outputs, r.total_cost
            except InfeasibleError:
                continue
            energy[h, s] = cost
            dispatch[(h, s)] = out
        if not np.isfinite(energy[h]).any():
            raise InfeasibleError(f"no feasible commitment for hour {h}", "capacity", hour=h)

    # value[h, s]: optimal cost of hours h.. given state s at hour h
    value = np.empty((H, S))
    value[H - 1] = energy[H - 1]
    for h in range(H - 2, -1, -1):
        value[h] = energy[h] + np.min(trans + value[h + 1][None, :], axis=1)

    chosen = []
    best = init_trans + value[0]
    s = _first_min(best)
    total = float(best[s])
    chosen.append(s)
    for h in range(1, H):
        s = _first_min(trans[s] + value[h])
        chosen.append(s)

    on = [states[s] for s in chosen]
    energy_cost = float(sum(energy[h, s] for h, s in enumerate(chosen)))
    start = float(init_trans[chosen[0]] + sum(trans[a, b] for a, b in zip(chosen, chosen[1:])))
    return CommitmentSchedule(
        unit_ids=[g.id for g in units],
        on=on,
        dispatch=[dispatch[(h, s)] for h, s in enumerate(chosen)],
        total_cost=energy_cost + start,
        energy_cost=energy_cost,
        startup_cost=start,
    )


def _first_min(values: np.ndarray) -> int:
    """Index of the first entry within tolerance of the minimum."""
    m = float(np.min(values))
    if not math.isfinite(m):
        raise InfeasibleError("no feasible commitment path", "capacity")
    tol = _TIE_TOL * max(1.0, abs(m))
    return int(np.flatnonzero(values <= m + tol)[0])


def required_scenarios(n: int, epsilon: float) -> int:
    """``ceil((1 - epsilon) n)``, robust to binary rounding of epsilon."""
    return max(1, math.ceil((1.0 - epsilon) * n - 1e-9))


def scenario_dispatch(
    gens: Sequence[Generator],
    demand_scenarios: Sequence[float | Mapping[int, float]],
    net: Network | None = None,
    epsilon: float = 0.0,
    *,
    base_mva: float = 100.0,
    shortfall_cost: float = 1000.0,
    reserve_mw: float = 0.0,
    max_subsets: int = 5000,
) -> DispatchResult:
    """One dispatch feasible for at least ``ceil((1-epsilon) N)`` scenarios.

    Each retained scenario must be balanced by the shared dispatch plus a
    slack-bus shortfall variable (bounded by ``reserve_mw`` and charged at
    ``shortfall_cost`` in expectation) or spill. The discarded scenarios are
    chosen to minimize cost: every subset is tried when there are at most
    ``max_subsets`` of them, otherwise scenarios are removed greedily one at
    a time. The reported LMP at a bus is the sum of its balance duals over
    retained scenarios.
    """
    _check_network(net)
    n = len(demand_scenarios)
    if n == 0:
        raise ValueError("at least one scenario required")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must be in [0, 1)")
    demands = [_bus_demand(d, net) for d in demand_scenarios]
    keep = required_scenarios(n, epsilon)
    drop = n - keep

    def solve_subset(retained):
        lp = _DispatchLP(
            gens, net, base_mva, [demands[i] for i in retained], shortfall_cost, reserve_mw
        )
        try:
            return lp, lp.solve()
        except InfeasibleError:
            return lp, None

    best = None
    if math.comb(n, drop) <= max_subsets:
        candidates = (
            tuple(i for i in range(n) if i not in dropped)
            for dropped in itertools.combinations(range(n), drop)
        )
        for retained in candidates:
            lp, res = solve_subset(retained)
            if res is not None and (best is None or res.fun < best[2].fun - _TIE_TOL * max(1, abs(best[2].fun))):
                best = (retained, lp, res)
    else:
        retained = tuple(range(n))
        lp, res = solve_subset(retained)
        for _ in range(drop):
            step = None
            for i in retained:
                trial = tuple(k for k in retained if k != i)
                tlp, tres = solve_subset(trial)
                if tres is None:
                    continue
                if step is None or tres.fun < step[2].fun - _TIE_TOL * max(1, abs(step[2].fun)):
                    step = (trial, tlp, tres)
            if step is None:
                break
            retained, lp, res = step
        if res is not None and len(retained) == keep:
            best = (retained, lp, res)
    if best is None:
        raise InfeasibleError(
            f"no dispatch covers {keep} of {n} scenarios", "scenario_coverage", required=keep
        )
    retained, lp, res = best
    dropped = tuple(i for i in range(n) if i not in retained)
    return _result(lp, res, gens, net, res.eq_duals, dropped)
