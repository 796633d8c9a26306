"""Scenario files.

A scenario is a TOML document::

    name = "two-area"
    horizon_s = 600
    output = "out"

    [seeds]
    default = 7        # every module's seed unless overridden
    agc = 11

    [network]          # transmission network for the dispatch loops
    topology = "meshed_transmission"
    buses = [{id = 1, kind = "slack"}, {id = 2}]
    lines = [{from = 1, to = 2, susceptance = 10.0, flow_limit = 0.3}]

    [loops.agc]        # one table per enabled loop
    kp = 0.1

    [[disturbances]]
    time_s = 60
    loop = "agc"
    kind = "load_step"
    area = 1
    magnitude = 0.1

    [[attacks]]
    kind = "bias"
    magnitude = 0.01
    target = "freq"
    start_time = 60

Validation gathers every problem it can find before reporting, so one
run of ``gridloop run`` lists all mistakes at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from ..errors import ConfigError, NetworkError
from ..grid import Bus, Line, Network

_MISSING = object()

LOOP_NAMES = ("agc", "ed", "uc", "bes", "ev", "evcs", "demand", "microgrid")
DISTURBANCE_KINDS = ("load_step", "island", "reconnect")


class Reader:
    """Typed access to one TOML table, collecting problems instead of raising."""

    def __init__(self, table: dict, where: str, problems: list[str]):
        self.table = table if isinstance(table, dict) else {}
        self.where = where
        self.problems = problems
        self.used: set[str] = set()
        if not isinstance(table, dict):
            problems.append(f"{where}: expected a table")

    def problem(self, msg: str) -> None:
        self.problems.append(f"{self.where}: {msg}")

    def get(self, key: str, kind: type | tuple = float, default: Any = _MISSING, check: Callable | None = None, why: str = ""):
        self.used.add(key)
        if key not in self.table:
            if default is _MISSING:
                self.problem(f"missing required key '{key}'")
            return None if default is _MISSING else default
        value = self.table[key]
        kinds = kind if isinstance(kind, tuple) else (kind,)
        if float in kinds and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kinds) or (isinstance(value, bool) and bool not in kinds):
            names = "/".join(k.__name__ for k in kinds)
            self.problem(f"'{key}' must be {names}, got {type(value).__name__}")
            return None if default is _MISSING else default
        if check is not None and not check(value):
            self.problem(f"'{key}' = {value!r} is invalid{': ' + why if why else ''}")
            return None if default is _MISSING else default
        return value

    def floats(self, key: str, default: Any = _MISSING, length: int | None = None):
        raw = self.get(key, list, default)
        if raw is None or raw is default:
            return raw
        try:
            out = [float(v) for v in raw]
        except (TypeError, ValueError):
            self.problem(f"'{key}' must be a list of numbers")
            return None
        if length is not None and len(out) != length:
            self.problem(f"'{key}' must have {length} entries, got {len(out)}")
            return None
        return out

    def tables(self, key: str, default: Any = _MISSING) -> list[Reader]:
        raw = self.get(key, list, default)
        if raw is None:
            return []
        return [Reader(item, f"{self.where}.{key}[{i}]", self.problems) for i, item in enumerate(raw)]

    def sub(self, key: str, default: Any = _MISSING) -> Reader | None:
        raw = self.get(key, dict, default)
        if raw is None:
            return None
        return Reader(raw, f"{self.where}.{key}", self.problems)

    def finish(self) -> None:
        extra = sorted(set(self.table) - self.used)
        for k in extra:
            self.problem(f"unknown key '{k}'")


def positive(v) -> bool:
    return v > 0


def non_negative(v) -> bool:
    return v >= 0


def parse_network(r: Reader) -> Network | None:
    """Build a network from ``buses`` and ``lines`` arrays; None if any entry is bad."""
    topology = r.get("topology", str, "meshed_transmission")
    buses, lines, ok = [], [], True
    n_before = len(r.problems)
    for b in r.tables("buses"):
        bid = b.get("id", int)
        try:
            buses.append(
                Bus(
                    bid,
                    b.get("kind", str, "pq"),
                    b.get("voltage_sq", float, 1.0),
                    b.get("angle", float, 0.0),
                    b.get("p_inject", float, 0.0),
                    b.get("q_inject", float, 0.0),
                )
            )
        except (ValueError, NetworkError) as exc:
            b.problem(str(exc))
        b.finish()
    for ln in r.tables("lines"):
        try:
            lines.append(
                Line(
                    ln.get("from", int),
                    ln.get("to", int),
                    ln.get("susceptance", float, None),
                    ln.get("r", float, 0.0),
                    ln.get("x", float, 0.0),
                    ln.get("flow_limit", float, math.inf),
                    ln.get("current_limit", float, math.inf),
                )
            )
        except (ValueError, NetworkError) as exc:
            ln.problem(str(exc))
        ln.finish()
    r.finish()
    ok = len(r.problems) == n_before
    if not ok:
        return None
    try:
        net = Network(tuple(buses), tuple(lines), topology)
    except (ValueError, NetworkError) as exc:
        r.problem(str(exc))
        return None
    if len(net.components()) > 1:
        r.problem("network is not connected")
        return None
    return net


@dataclass(frozen=True)
class Disturbance:
    time_s: float
    loop: str
    kind: str
    params: dict = field(default_factory=dict)


@dataclass
class ScenarioConfig:
    name: str
    horizon_s: float
    seeds: dict[str, int]
    default_seed: int
    network: Network | None
    loops: dict[str, dict]
    disturbances: list[Disturbance]
    attacks: list[dict]
    output: Path | None
    base_mva: float = 100.0
    source: Path | None = None

    def seed_for(self, module: str) -> int:
        return self.seeds.get(module, self.default_seed)

    def with_seed(self, seed: int) -> ScenarioConfig:
        """Copy with every module seed replaced by ``seed``."""
        import copy

        cfg = copy.copy(self)
        cfg.seeds = {}
        cfg.default_seed = seed
        return cfg


def load_config(source: str | Path, *, text: str | None = None) -> ScenarioConfig:
    """Parse and check the top-level structure of a scenario file.

    Loop sections are only checked for shape here; their contents are
    validated when the loops are built (see ``validate``).
    """
    path = Path(source) if text is None else None
    try:
        raw = tomllib.loads(path.read_text() if text is None else text)
    except FileNotFoundError:
        raise ConfigError([f"scenario file {source} does not exist"]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{source}: not valid TOML ({exc})"]) from None
    problems: list[str] = []
    r = Reader(raw, "scenario", problems)
    name = r.get("name", str, path.stem if path else "scenario")
    horizon = r.get("horizon_s", float, check=positive, why="horizon must be > 0")
    output = r.get("output", str, None)
    base_mva = r.get("base_mva", float, 100.0, positive)

    seeds: dict[str, int] = {}
    default_seed = 0
    s = r.sub("seeds", {})
    if s is not None:
        for k in list(s.table):
            v = s.get(k, int, check=non_negative, why="seeds must be non-negative")
            if v is not None:
                if k == "default":
                    default_seed = v
                elif k in LOOP_NAMES:
                    seeds[k] = v
                else:
                    s.problem(f"unknown module '{k}'")

    network = None
    nr = r.sub("network", None)
    if nr is not None:
        network = parse_network(nr)

    loops: dict[str, dict] = {}
    lr = r.get("loops", dict, {})
    for k, v in (lr or {}).items():
        if k not in LOOP_NAMES:
            problems.append(f"loops: unknown loop '{k}' (known: {', '.join(LOOP_NAMES)})")
        elif not isinstance(v, dict):
            problems.append(f"loops.{k}: expected a table")
        elif v.get("enabled", True) is not False:
            loops[k] = {kk: vv for kk, vv in v.items() if kk != "enabled"}

    disturbances = []
    for d in r.tables("disturbances", []):
        t = d.get("time_s", float, check=non_negative)
        loop = d.get("loop", str)
        kind = d.get("kind", str, check=lambda v: v in DISTURBANCE_KINDS, why=f"one of {DISTURBANCE_KINDS}")
        params = {k: v for k, v in d.table.items() if k not in ("time_s", "loop", "kind")}
        if loop is not None and loop not in loops:
            d.problem(f"refers to loop '{loop}', which is not enabled")
        if horizon is not None and t is not None and t > horizon:
            d.problem(f"time {t} s is beyond the horizon {horizon} s")
        if None not in (t, loop, kind):
            disturbances.append(Disturbance(t, loop, kind, params))

    attacks = []
    for a in r.tables("attacks", []):
        if "agc" not in loops:
            a.problem("sensor attacks need the agc loop to be enabled")
        attacks.append(dict(a.table))
    r.finish()
    if problems:
        raise ConfigError(problems)
    return ScenarioConfig(
        name=name,
        horizon_s=horizon,
        seeds=seeds,
        default_seed=default_seed,
        network=network,
        loops=loops,
        disturbances=sorted(disturbances, key=lambda d: d.time_s),
        attacks=attacks,
        output=Path(output) if output else None,
        base_mva=base_mva,
        source=path,
    )
