"""Adapters that turn each control module into a scheduled loop.

Every loop is built from its ``[loops.<name>]`` table, owns its own state
and random stream, and on each activation emits trace records through the
``emit(entity, signal, value)`` callback. Module CSV files are written at
the end of the run.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from pathlib import Path
from types import MappingProxyType
from typing import Callable

import numpy as np

from .. import agc, demand, dispatch, ev, microgrid, storage
from ..errors import InfeasibleError, NetworkError
from ..grid import Topology
from ..rng import CounterRng
from .config import Disturbance, Reader, ScenarioConfig, non_negative, parse_network, positive
from .schedule import NS_PER_S, LoopRegistration
from .trace import CsvWriter, fmt

Emit = Callable[[str, str, float], None]


@dataclass(frozen=True)
class RegistryEntry:
    loop_id: str
    parties: str
    description: str
    module: str | None
    """Config section implementing the loop, or None for documented stubs."""


LOOP_REGISTRY: tuple[RegistryEntry, ...] = (
    RegistryEntry("loop1.fuel", "GENCO - fuel supply", "fuel procurement for scheduled generation", None),
    RegistryEntry("loop2.agc", "GENCO - ISO", "automatic generation control (seconds)", "agc"),
    RegistryEntry("loop2.ed", "GENCO - ISO", "real-time economic dispatch (5 minutes)", "ed"),
    RegistryEntry("loop2.uc", "GENCO - ISO", "day-ahead unit commitment", "uc"),
    RegistryEntry("loop3.transmission", "ISO - TRANSCO", "transmission monitoring and outage coordination", None),
    RegistryEntry("loop4.governor", "GENCO", "governor droop; simulated inside loop2.agc", None),
    RegistryEntry("loop5.protection", "TRANSCO", "protection systems (milliseconds)", None),
    RegistryEntry("loop6.service", "DISCO - customer", "power delivery and voltage control", None),
    RegistryEntry("loop7.ev", "DISCO - transportation", "coordinated EV charging", "ev"),
    RegistryEntry("loop7.evcs", "DISCO - transportation", "charging-station siting", "evcs"),
    RegistryEntry("loop8.purchase", "ISO - DISCO", "wholesale power purchase", None),
    RegistryEntry("loop9.bes", "ISO - aggregator", "battery regulation-market participation", "bes"),
    RegistryEntry("loop9.demand", "ISO - aggregator", "thermal load control for demand response", "demand"),
    RegistryEntry("loop10.scada", "DISCO", "distribution outage management and maintenance", None),
    RegistryEntry("loop11.contract", "DISCO - aggregator", "delivery-service contracts", None),
    RegistryEntry("loop12.tou", "aggregator - transportation", "time-of-use contracts", None),
    RegistryEntry("loop13.contract", "aggregator - customer", "flexible customer contracts", None),
    RegistryEntry("customer.microgrid", "customer", "hierarchical microgrid control", "microgrid"),
)

LOOP_IDS = {e.module: e.loop_id for e in LOOP_REGISTRY if e.module}


class Loop:
    module: str = ""
    period: float = 1.0
    phase: float = 0.0
    csv_name: str | None = None

    def __init__(self):
        self.loop_id = LOOP_IDS[self.module]
        self.activations = 0
        self.csv: CsvWriter | None = None

    def registration(self) -> LoopRegistration:
        return LoopRegistration(self.loop_id, self.period, self.phase)

    def activate(self, t_ns: int, emit: Emit, snapshot: MappingProxyType) -> dict:
        self.activations += 1
        return self.step(t_ns / NS_PER_S, emit, snapshot) or {}

    def step(self, t: float, emit: Emit, snapshot) -> dict | None:
        raise NotImplementedError

    def state_values(self) -> list[float]:
        return []

    def digest(self) -> str:
        text = ",".join(fmt(float(v)) for v in self.state_values())
        return hashlib.sha256(text.encode("ascii")).hexdigest()[:16]

    def write(self, out_dir: Path) -> dict[str, str]:
        if self.csv is None or self.csv_name is None:
            return {}
        return {self.csv_name: self.csv.write(out_dir / self.csv_name)}


def _pick(r: Reader, key: str, kind=float, default=None, check=None, why=""):
    return r.get(key, kind, default, check, why)


# ---------------------------------------------------------------- AGC


class AgcLoop(Loop):
    module = "agc"

    def __init__(self, r: Reader, cfg: ScenarioConfig, disturbances: list[Disturbance]):
        super().__init__()
        self.period = _pick(r, "period_s", float, 0.02, lambda v: 0 < v <= agc.MAX_DT, "need 0 < period_s <= 0.1")
        self.trace_stride = _pick(r, "trace_stride", int, 50, positive)
        area = agc.AreaDynamics(
            inertia=_pick(r, "inertia", float, 10.0, positive),
            damping=_pick(r, "damping", float, 1.0, non_negative),
            droop=_pick(r, "droop", float, 0.05, positive),
            governor_tc=_pick(r, "governor_tc", float, 0.2, positive),
            turbine_tc=_pick(r, "turbine_tc", float, 0.5, positive),
        )
        bias = _pick(r, "bias", float, 21.0, positive)
        system = agc.AgcSystem(
            areas=(area, area),
            tie_stiffness=_pick(r, "tie_stiffness", float, 2.0, positive),
            bias=(bias, bias),
            smoothing_tc=_pick(r, "smoothing_tc", float, 2.0, positive),
            kp=_pick(r, "kp", float, 0.1),
            ki=_pick(r, "ki", float, 0.05),
            dt=self.period or 0.02,
            agc_enabled=_pick(r, "agc_enabled", bool, True),
        )
        wm_var = _pick(r, "watermark_variance", float, 1e-4, non_negative)
        noise = agc.NoiseSpec(
            load_std=_pick(r, "load_std", float, agc.NoiseSpec.load_std, non_negative),
            freq_sensor_std=_pick(r, "freq_sensor_std", float, agc.NoiseSpec.freq_sensor_std, non_negative),
            tie_sensor_std=_pick(r, "tie_sensor_std", float, agc.NoiseSpec.tie_sensor_std, non_negative),
        )
        monitor = agc.MonitorConfig(
            window=_pick(r, "window", int, 1000, lambda v: v >= agc.MIN_WINDOW, f"need >= {agc.MIN_WINDOW}"),
            stride=_pick(r, "stride", int, 250, positive),
        )
        th_path = _pick(r, "thresholds", str, None)
        r.finish()
        thresholds = None
        if wm_var:
            try:
                thresholds = (
                    agc.Thresholds.from_json(Path(th_path).read_text()) if th_path else agc.default_thresholds()
                )
            except (OSError, KeyError, ValueError) as exc:
                r.problem(f"cannot read thresholds: {exc}")
        steps = []
        for d in disturbances:
            if d.kind != "load_step":
                r.problem(f"disturbance kind '{d.kind}' does not apply to the agc loop")
                continue
            area_no = d.params.get("area", 1)
            mag = d.params.get("magnitude")
            if area_no not in (1, 2) or not isinstance(mag, (int, float)):
                r.problem("agc load_step needs area (1 or 2) and a numeric magnitude")
                continue
            steps.append(agc.LoadStep(d.time_s, area_no - 1, float(mag)))
        attacks = []
        for i, a in enumerate(cfg.attacks):
            ar = Reader(a, f"attacks[{i}]", r.problems)
            try:
                attacks.append(
                    agc.SensorAttack(
                        kind=ar.get("kind", str),
                        magnitude=ar.get("magnitude", float, 0.0),
                        target=ar.get("target", str, "freq"),
                        start_time=ar.get("start_time", float, 0.0),
                        end_time=ar.get("end_time", float, math.inf),
                        seed=cfg.seed_for("agc"),
                    )
                )
            except (ValueError, TypeError) as exc:
                ar.problem(str(exc))
            ar.finish()
        if r.problems:
            return
        self.sim = agc.AgcSimulator(
            system,
            [cfg.seed_for("agc")],
            watermark_variance=wm_var or None,
            noise=noise,
            attacks=attacks,
            load_steps=steps,
            monitor=monitor if wm_var else None,
            thresholds=thresholds,
        )

    def step(self, t, emit, snapshot):
        out = self.sim.step()
        k = self.sim.k - 1
        x = out["x"][0]
        if k % self.trace_stride == 0:
            emit("area1", "freq_a1", float(x[0]))
            emit("area2", "freq_a2", float(x[1]))
            emit("tie", "ptie", float(x[6]))
            emit("area1", "ace_a1", float(out["ace"][0, 0]))
            emit("area1", "sace_a1", float(out["sace"][0, 0]))
            emit("area1", "pset_a1", float(out["pset"][0, 0]))
        if "corr" in out:
            emit("detector", "wm_corr", float(out["corr"][0]))
            emit("detector", "wm_var", float(out["var"][0]))
            if "alarm" in out:
                emit("detector", "alarm", bool(out["alarm"][0]))
        return {"freq_a1": float(x[0]), "freq_a2": float(x[1]), "ptie": float(x[6])}

    def state_values(self):
        return list(self.sim.x[0]) + list(self.sim.integral[0])


# ----------------------------------------------------------- dispatch


def _generators(r: Reader, key="generators") -> list[dispatch.Generator]:
    gens = []
    for g in r.tables(key):
        cost = g.get("cost", (float, list))
        if isinstance(cost, list):
            try:
                cost = tuple((float(u), float(c)) for u, c in cost)
            except (TypeError, ValueError):
                g.problem("cost segments must be [[upper_mw, cost], ...]")
                cost = None
        try:
            gens.append(
                dispatch.Generator(
                    str(g.get("id", (str, int))),
                    g.get("bus", int, 0),
                    cost,
                    g.get("p_min", float, 0.0),
                    g.get("p_max", float),
                    g.get("startup_cost", float, 0.0),
                    g.get("committed", bool, True),
                )
            )
        except (ValueError, TypeError) as exc:
            g.problem(str(exc))
        g.finish()
    return gens


def _check_gen_buses(r, gens, net):
    if net is None:
        return
    for g in gens:
        try:
            net.index(g.bus)
        except NetworkError:
            r.problem(f"generator {g.id} sits on unknown bus {g.bus}")


def _demand_map(r: Reader, key: str, net, default=None):
    """Per-bus demand from a scalar (slack bus) or a list aligned with the network buses."""
    raw = r.get(key, (float, list), default)
    if raw is None:
        return None
    if isinstance(raw, float):
        return raw
    if net is None:
        r.problem(f"'{key}' as a per-bus list needs a [network] section")
        return None
    if len(raw) != net.n_bus:
        r.problem(f"'{key}' needs {net.n_bus} entries (one per bus)")
        return None
    return {b.id: float(v) for b, v in zip(net.buses, raw)}


class EdLoop(Loop):
    module = "ed"
    csv_name = "dispatch.csv"

    def __init__(self, r: Reader, cfg: ScenarioConfig, disturbances):
        super().__init__()
        self.net = cfg.network
        self.base_mva = cfg.base_mva
        self.period = _pick(r, "period_s", float, dispatch.REALTIME_DISPATCH_PERIOD_S, positive)
        self.gens = _generators(r)
        _check_gen_buses(r, self.gens, self.net)
        self.demand = _demand_map(r, "demand_mw", self.net)
        self.profile = r.floats("profile", [1.0])
        self.epsilon = _pick(r, "epsilon", float, None, lambda v: 0 <= v < 1, "need 0 <= epsilon < 1")
        self.scenarios = [_demand_from(v, self.net, r) for v in r.get("scenarios", list, [])]
        self.shortfall_cost = _pick(r, "shortfall_cost", float, 1000.0, non_negative)
        self.reserve_mw = _pick(r, "reserve_mw", float, 0.0, non_negative)
        r.finish()
        self.steps = []
        for d in disturbances:
            if d.kind != "load_step" or not isinstance(d.params.get("magnitude"), (int, float)):
                r.problem("ed disturbances must be load_step with a numeric magnitude (MW)")
                continue
            bus = d.params.get("bus", self.net.slack_id if self.net else 0)
            self.steps.append((d.time_s, bus, float(d.params["magnitude"])))
        self.csv = CsvWriter(("hour", "unit_id", "on", "mw", "lmp_bus", "cost"))
        self.last = None

    def _demand_at(self, t):
        factor = self.profile[int(t // 3600) % len(self.profile)] if self.profile else 1.0
        extra: dict = {}
        for ts, bus, mw in self.steps:
            if ts <= t + 1e-9:
                extra[bus] = extra.get(bus, 0.0) + mw
        if isinstance(self.demand, dict):
            out = {k: v * factor for k, v in self.demand.items()}
        else:
            base = self.demand * factor
            slack = self.net.slack_id if self.net else 0
            out = {slack: base}
        for bus, mw in extra.items():
            out[bus] = out.get(bus, 0.0) + mw
        return out

    def step(self, t, emit, snapshot):
        d = self._demand_at(t)
        demand_arg = d if self.net is not None else float(sum(d.values()))
        if self.scenarios:
            factor = self.profile[int(t // 3600) % len(self.profile)]
            scen = [{k: v * factor for k, v in s.items()} if isinstance(s, dict) else s * factor for s in self.scenarios]
            res = dispatch.scenario_dispatch(
                self.gens,
                scen,
                self.net,
                self.epsilon or 0.0,
                base_mva=self.base_mva,
                shortfall_cost=self.shortfall_cost,
                reserve_mw=self.reserve_mw,
            )
        else:
            res = dispatch.economic_dispatch(self.gens, demand_arg, self.net, base_mva=self.base_mva)
        self.last = res
        for g in self.gens:
            mw = res.outputs[g.id]
            lmp = res.lmp.get(g.bus if self.net is not None else 0, float("nan"))
            emit(g.id, "p_mw", mw)
            self.csv.add(t / 3600.0, g.id, int(g.committed), mw, lmp, g.cost(mw))
        for bus, price in sorted(res.lmp.items()):
            emit(f"bus{bus}", "lmp", price)
        emit("system", "total_cost", res.total_cost)
        return {"total_cost": res.total_cost}

    def state_values(self):
        if self.last is None:
            return []
        return [self.last.outputs[g.id] for g in self.gens] + [self.last.total_cost]


def _demand_from(v, net, r):
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, list) and net is not None and len(v) == net.n_bus:
        return {b.id: float(x) for b, x in zip(net.buses, v)}
    r.problem("each scenario must be a number or a per-bus list")
    return 0.0


class UcLoop(Loop):
    module = "uc"
    csv_name = "commitment.csv"

    def __init__(self, r: Reader, cfg: ScenarioConfig, disturbances):
        super().__init__()
        self.net = cfg.network
        self.base_mva = cfg.base_mva
        self.period = _pick(r, "period_s", float, 86400.0, positive)
        self.gens = _generators(r)
        _check_gen_buses(r, self.gens, self.net)
        raw = r.get("hourly_demand", list)
        self.hourly = [_demand_from(v, self.net, r) for v in raw] if raw else []
        if raw is not None and not 1 <= len(self.hourly) <= dispatch.MAX_UC_HOURS:
            r.problem(f"hourly_demand needs 1 to {dispatch.MAX_UC_HOURS} entries")
        if len(self.gens) > dispatch.MAX_UC_UNITS:
            r.problem(f"at most {dispatch.MAX_UC_UNITS} generators")
        r.finish()
        if disturbances:
            r.problem("the uc loop takes no disturbances")
        self.csv = CsvWriter(("hour", "unit_id", "on", "mw", "lmp_bus", "cost"))
        self.last = None

    def step(self, t, emit, snapshot):
        sched = dispatch.unit_commitment(self.gens, self.hourly, self.net, base_mva=self.base_mva)
        self.last = sched
        day_start = t / 3600.0
        for h, (flags, out) in enumerate(zip(sched.on, sched.dispatch)):
            committed = [replace(g, committed=bool(f)) for g, f in zip(self.gens, flags)]
            try:
                lmp = dispatch.economic_dispatch(committed, self.hourly[h], self.net, base_mva=self.base_mva).lmp
            except InfeasibleError:
                lmp = {}
            for g, f in zip(self.gens, flags):
                mw = out.get(g.id, 0.0)
                price = lmp.get(g.bus if self.net is not None else 0, float("nan"))
                self.csv.add(day_start + h, g.id, int(f), mw, price, g.cost(mw) if f else 0.0)
        for g, col in zip(self.gens, zip(*sched.on)):
            emit(g.id, "on_hours", sum(col))
        emit("system", "total_cost", sched.total_cost)
        emit("system", "startup_cost", sched.startup_cost)
        return {"total_cost": sched.total_cost}

    def state_values(self):
        return [] if self.last is None else [self.last.total_cost] + [float(f) for row in self.last.on for f in row]


# ------------------------------------------------------------ storage


class BesLoop(Loop):
    module = "bes"
    csv_name = "bes.csv"

    def __init__(self, r: Reader, cfg: ScenarioConfig, disturbances):
        super().__init__()
        interval = _pick(r, "interval_h", float, 1.0, positive)
        try:
            self.cfg = storage.BesConfig(
                capacity_max=_pick(r, "capacity_max", float),
                power_rating=_pick(r, "power_rating", float),
                soc_min=_pick(r, "soc_min", float),
                soc_max=_pick(r, "soc_max", float),
                efficiency=_pick(r, "efficiency", float, 1.0),
                interval=interval or 1.0,
                aging_coeff=_pick(r, "aging_coeff", float, 0.0),
                soc_init=_pick(r, "soc_init", float, None),
            )
        except (TypeError, ValueError) as exc:
            r.problem(str(exc))
        self.period = (interval or 1.0) * 3600.0
        price = _pick(r, "price", float, 0.0, non_negative)
        floor = _pick(r, "performance_floor", float, 0.0, lambda v: 0 <= v <= 1, "need [0, 1]")
        self.epsilon = _pick(r, "epsilon", float, 0.0, lambda v: 0 <= v < 1, "need 0 <= epsilon < 1")
        signals = r.get("signals", list, None)
        n_sc = _pick(r, "n_scenarios", int, 1, positive)
        n_steps = _pick(r, "n_steps", int, 24, positive)
        r.finish()
        if disturbances:
            r.problem("the bes loop takes no disturbances")
        if signals is None:
            rng = CounterRng(cfg.seed_for("bes"), "bes", "signal")
            signals = [np.clip(0.5 * rng.normal(n_steps or 24), -1.0, 1.0).tolist() for _ in range(n_sc or 1)]
        self.markets = []
        for i, s in enumerate(signals):
            try:
                self.markets.append(storage.RegulationMarket(price, floor, tuple(s)))
            except (TypeError, ValueError) as exc:
                r.problem(f"signals[{i}]: {exc}")
        if len({len(m.signal) for m in self.markets}) > 1:
            r.problem("all regulation signals must have the same length")
        self.plan = None
        self.csv = CsvWriter(("k", "r", "b", "e"))

    def step(self, t, emit, snapshot):
        if self.plan is None:
            self.plan = storage.optimize_bes_plan(self.cfg, self.markets, self.epsilon)
            emit("bes", "capacity", self.plan.capacity)
            emit("bes", "revenue", self.plan.revenue)
            if self.plan.no_feasible_capacity:
                emit("bes", "no_feasible_capacity", True)
        k = self.activations - 1
        sig = self.markets[0].signal
        if k < len(sig):
            b, e = float(self.plan.dispatch[0, k]), float(self.plan.soc[0, k + 1])
            emit("bes", "r", sig[k])
            emit("bes", "b", b)
            emit("bes", "soc", e)
            self.csv.add(k, sig[k], b, e)
        return None

    def write(self, out_dir):
        if self.plan is not None:
            self.csv.add("summary", self.plan.capacity, float(self.plan.score[0]), self.plan.revenue)
        return super().write(out_dir)

    def state_values(self):
        return [] if self.plan is None else [self.plan.capacity, self.plan.revenue]


# ----------------------------------------------------------------- EV


class EvLoop(Loop):
    module = "ev"
    csv_name = "ev.csv"

    def __init__(self, r: Reader, cfg: ScenarioConfig, disturbances):
        super().__init__()
        self.dk = _pick(r, "slot_h", float, 1.0, positive) or 1.0
        self.period = self.dk * 3600.0
        self.base = r.floats("base_load")
        self.method = _pick(r, "method", str, "decentralized", lambda v: v in ("decentralized", "centralized"))
        self.step_size = _pick(r, "step", float, None, positive)
        self.sessions = []
        for s in r.tables("sessions"):
            try:
                self.sessions.append(
                    ev.EvSession(
                        s.get("id", (int, str)),
                        s.get("k_start", int),
                        s.get("k_end", int),
                        s.get("rate_max", float),
                        s.get("efficiency", float, 1.0),
                        s.get("battery_capacity", float),
                        s.get("soc_start", float),
                        s.get("soc_end", float),
                    )
                )
            except (TypeError, ValueError) as exc:
                s.problem(str(exc))
            s.finish()
        r.finish()
        if disturbances:
            r.problem("the ev loop takes no disturbances")
        if self.base is not None:
            for s in self.sessions:
                if s.k_end >= len(self.base):
                    r.problem(f"EV {s.id}: window ends after the last base-load slot")
        self.profile = None
        ids = [f"ev_{s.id}" for s in self.sessions]
        self.csv = CsvWriter(("slot", "base_load", "aggregate_load", *ids))

    def step(self, t, emit, snapshot):
        K = len(self.base)
        if self.profile is None:
            if self.method == "centralized":
                self.profile = ev.centralized_schedule(self.sessions, self.base, K, self.dk)
            else:
                self.profile = ev.decentralized_schedule(self.sessions, self.base, K, self.dk, self.step_size)
            emit("aggregator", "iterations", self.profile.iterations)
            emit("aggregator", "objective", ev.valley_objective(self.profile.rates, self.base))
        k = self.activations - 1
        if k < K:
            rates = self.profile.rates[:, k] if self.sessions else np.zeros(0)
            agg = self.base[k] + float(rates.sum())
            emit("aggregator", "aggregate_load", agg)
            for s, w in zip(self.sessions, rates):
                emit(f"ev_{s.id}", "rate", float(w))
            self.csv.add(k, self.base[k], agg, *map(float, rates))
        return None

    def state_values(self):
        return [] if self.profile is None else list(self.profile.rates.ravel())


class EvcsLoop(Loop):
    module = "evcs"
    csv_name = "evcs.csv"

    def __init__(self, r: Reader, cfg: ScenarioConfig, disturbances):
        super().__init__()
        self.period = math.inf
        nr = r.sub("network")
        net = parse_network(nr) if nr is not None else None
        if net is not None and net.topology is not Topology.RADIAL_DISTRIBUTION:
            r.problem("network must be radial_distribution")
            net = None
        cands = r.get("candidates", list)
        fixed = r.floats("fixed_cost")
        args = dict(
            per_spot_cost=_pick(r, "per_spot_cost", float, 0.0, non_negative),
            spot_power=_pick(r, "spot_power", float, check=positive),
            demand_floor=_pick(r, "demand_floor", float, 0.0, non_negative),
            budget=_pick(r, "budget", float, math.inf, non_negative),
            v_min=_pick(r, "v_min", float, 0.95, positive),
            v_max=_pick(r, "v_max", float, 1.05, positive),
            y_max=_pick(r, "y_max", int, 20, non_negative),
            base_kva=_pick(r, "base_kva", float, 1000.0, positive),
        )
        r.finish()
        if disturbances:
            r.problem("the evcs loop takes no disturbances")
        if cands is not None and fixed is not None and len(cands) != len(fixed):
            r.problem("fixed_cost needs one entry per candidate")
        self.prob = None
        if net is not None and cands is not None and fixed is not None and not r.problems:
            try:
                self.prob = ev.PlacementProblem(net, tuple(cands), dict(zip(cands, fixed)), **args)
            except (ValueError, TypeError, NetworkError) as exc:
                r.problem(str(exc))
        self.result = None
        self.csv = CsvWriter(("node", "x", "y", "voltage_sq"))

    def step(self, t, emit, snapshot):
        self.result = ev.evcs_place(self.prob)
        net = self.prob.net
        opened = dict(zip(self.prob.candidates, zip(self.result.x, self.result.y)))
        for b, v in zip(net.buses, self.result.voltage_sq):
            x, y = opened.get(b.id, (0, 0))
            self.csv.add(b.id, x, y, float(v))
            if b.id in opened:
                emit(f"node{b.id}", "x", x)
                emit(f"node{b.id}", "y", y)
        emit("planner", "cost", self.result.cost)
        return None

    def write(self, out_dir):
        if self.result is not None:
            self.csv.add("summary", "", "", self.result.cost)
        return super().write(out_dir)

    def state_values(self):
        return [] if self.result is None else [self.result.cost, *self.result.x, *self.result.y]


# ------------------------------------------------------------- demand


class DemandLoop(Loop):
    module = "demand"
    csv_name = "demand.csv"
    MAX_TRACE_HOUSES = 20

    def __init__(self, r: Reader, cfg: ScenarioConfig, disturbances):
        super().__init__()
        self.dt = _pick(r, "physics_step_h", float, demand.PHYSICS_STEP_H, positive) or demand.PHYSICS_STEP_H
        self.period = self.dt * 3600.0
        self.slot_h = _pick(r, "slot_h", float, 1.0, positive) or 1.0
        self.price = r.floats("price")
        self.ambient = r.floats("ambient")
        self.energy = _pick(r, "energy", float, check=non_negative)
        self.controller = demand.TrackingController(
            kp=_pick(r, "kp", float, demand.TrackingController.kp),
            ki=_pick(r, "ki", float, demand.TrackingController.ki),
        )
        n = _pick(r, "n_houses", int, None, positive)
        houses = []
        for h in r.tables("houses", []):
            try:
                houses.append(
                    demand.ThermalHouse(
                        h.get("id", (int, str)),
                        h.get("alpha", float),
                        h.get("beta", float),
                        h.get("comfort_low", float),
                        h.get("comfort_high", float),
                        h.get("temp", float),
                        h.get("setpoint", float, None),
                        h.get("deadband", float, 0.5),
                        h.get("ac_power", float, 3.0),
                        h.get("efficiency", float, 1.0),
                        h.get("on", bool, False),
                    )
                )
            except (TypeError, ValueError) as exc:
                h.problem(str(exc))
            h.finish()
        r.finish()
        if disturbances:
            r.problem("the demand loop takes no disturbances")
        if n is not None and houses:
            r.problem("give either n_houses or houses, not both")
        if n is None and not houses:
            r.problem("need n_houses or a houses list")
        if self.price is not None and self.ambient is not None and len(self.price) != len(self.ambient):
            r.problem("price and ambient must have the same length")
        self.houses = houses or (demand.generate_fleet(n, cfg.seed_for("demand")) if n else [])
        self.tracker = None
        cols = [f"theta_{h.id}" for h in self.houses[: self.MAX_TRACE_HOUSES]]
        self.csv = CsvWriter(("t", "p_ref", "p_total", "v", *cols))

    def step(self, t, emit, snapshot):
        if self.tracker is None:
            plan = demand.lp_relaxed_schedule(
                self.houses, self.price, self.ambient, self.energy, slot_h=self.slot_h, physics_step_h=self.dt
            )
            emit("fleet", "plan_cost", plan.cost)
            self.tracker = demand.FleetTracker(self.houses, plan, self.controller, self.dt)
        if self.tracker.k >= self.tracker.steps:
            return None
        row = self.tracker.step()
        th = row["temps"][: self.MAX_TRACE_HOUSES]
        emit("fleet", "p_ref", row["p_ref"])
        emit("fleet", "p_total", row["p_total"])
        emit("fleet", "v", row["v"])
        self.csv.add(row["t"], row["p_ref"], row["p_total"], row["v"], *th)
        return None

    def state_values(self):
        if self.tracker is None:
            return []
        return [h.temp for h in self.tracker.houses] + [self.tracker.energy]


# ----------------------------------------------------------- microgrid


class MicrogridLoop(Loop):
    module = "microgrid"
    csv_name = "microgrid.csv"

    def __init__(self, r: Reader, cfg: ScenarioConfig, disturbances):
        super().__init__()
        self.period = _pick(r, "period_s", float, 1.0, positive)
        invs = []
        for i in r.tables("inverters"):
            try:
                invs.append(
                    microgrid.DroopInverter(
                        i.get("id", (int, str)),
                        i.get("droop_mp", float),
                        i.get("droop_mq", float),
                        i.get("omega_nom", float, 60.0),
                        i.get("v_nom", float, 1.0),
                        i.get("p_set", float, 0.0),
                        i.get("q_set", float, 0.0),
                        p_max=i.get("p_max", float, math.inf),
                        d_v_max=i.get("d_v_max", float, 0.1),
                    )
                )
            except (TypeError, ValueError) as exc:
                i.problem(str(exc))
            i.finish()
        try:
            self.state = microgrid.MicrogridState(
                tuple(invs),
                _pick(r, "p_load", float, 0.0),
                _pick(r, "q_load", float, 0.0),
                _pick(r, "mode", str, "islanded"),
                _pick(r, "omega_ref", float, 60.0, positive),
                _pick(r, "v_ref", float, 1.0, positive),
            )
        except (TypeError, ValueError) as exc:
            r.problem(str(exc))
        self.secondary = _pick(r, "secondary", bool, True)
        self.gain = _pick(r, "secondary_gain", float, 0.5, lambda v: 0 < v <= 1, "need (0, 1]")
        self.v_target = _pick(r, "v_target", float, None, positive)
        self.pcc_target = _pick(r, "pcc_target", float, None)
        r.finish()
        self.events = []
        for d in disturbances:
            if d.kind == "load_step":
                self.events.append((d.time_s, d))
            elif d.kind in ("island", "reconnect"):
                self.events.append((d.time_s, d))
        self.next_event = 0
        self.csv = CsvWriter(
            ("step", "mode", "omega", "pcc_flow", *[f"{c}_{i.id}" for i in invs for c in ("p", "q")])
        )

    def step(self, t, emit, snapshot):
        s = self.state
        while self.next_event < len(self.events) and self.events[self.next_event][0] <= t + 1e-9:
            d = self.events[self.next_event][1]
            if d.kind == "load_step":
                s = replace(
                    s,
                    p_load=s.p_load + float(d.params.get("p", d.params.get("magnitude", 0.0))),
                    q_load=s.q_load + float(d.params.get("q", 0.0)),
                )
            else:
                s = replace(s, mode=microgrid.Mode.ISLANDED if d.kind == "island" else microgrid.Mode.GRID_CONNECTED)
            self.next_event += 1
        s = microgrid.droop_steady_state(s)
        if s.mode is microgrid.Mode.ISLANDED and self.secondary:
            vt = s.v_ref if self.v_target is None else self.v_target
            dw = self.gain * (s.omega_ref - s.frequency)
            dv = self.gain * (vt - s.voltage)
            s = microgrid.droop_steady_state(microgrid._shift(s, dw, dv))
        elif s.mode is microgrid.Mode.GRID_CONNECTED and self.pcc_target is not None:
            s = microgrid.tertiary_setpoint(s, self.pcc_target)
        self.state = s
        emit("microgrid", "omega", s.frequency)
        emit("microgrid", "voltage", s.voltage)
        emit("microgrid", "pcc_flow", s.pcc_flow)
        for inv, p, q in zip(s.inverters, s.p_out, s.q_out):
            emit(f"inv_{inv.id}", "p", p)
            emit(f"inv_{inv.id}", "q", q)
        pq = [v for pair in zip(s.p_out, s.q_out) for v in pair]
        self.csv.add(self.activations - 1, s.mode.value, s.frequency, s.pcc_flow, *pq)
        return {"omega": s.frequency}

    def state_values(self):
        s = self.state
        return [] if s.frequency is None else [s.frequency, s.voltage, s.pcc_flow, *s.p_out, *s.q_out]


LOOP_CLASSES: dict[str, type[Loop]] = {
    "agc": AgcLoop,
    "ed": EdLoop,
    "uc": UcLoop,
    "bes": BesLoop,
    "ev": EvLoop,
    "evcs": EvcsLoop,
    "demand": DemandLoop,
    "microgrid": MicrogridLoop,
}
