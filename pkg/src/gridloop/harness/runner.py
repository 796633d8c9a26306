"""Scenario execution: build loops, walk the schedule, write traces."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Sequence

from ..errors import ConfigError, LoopRuntimeError
from .config import Reader, ScenarioConfig
from .loops import LOOP_CLASSES, Loop
from .schedule import NS_PER_S, iter_schedule
from .trace import TraceRecord, TraceWriter

SUMMARY_NAME = "summary.txt"
TRACE_NAME = "trace.csv"


@dataclass
class RunSummary:
    name: str
    horizon_s: float
    activations: dict[str, int]
    digests: dict[str, str]
    trace_records: int
    files: dict[str, str] = field(default_factory=dict)
    """Output file name -> sha256 of its bytes."""
    trace_text: str = ""
    loops: dict[str, Loop] = field(default_factory=dict, repr=False)
    """Finished loop objects by module name, for inspection after the run."""

    @property
    def trace_sha256(self) -> str:
        return hashlib.sha256(self.trace_text.encode("ascii")).hexdigest()

    def text(self) -> str:
        lines = [f"scenario={self.name}", f"horizon_s={self.horizon_s:.12g}", f"trace_records={self.trace_records}"]
        lines.append(f"total_activations={sum(self.activations.values())}")
        for lid in sorted(self.activations):
            lines.append(f"activations.{lid}={self.activations[lid]}")
        for lid in sorted(self.digests):
            lines.append(f"digest.{lid}={self.digests[lid]}")
        lines.append(f"sha256.{TRACE_NAME}={self.trace_sha256}")
        for name in sorted(self.files):
            if name != TRACE_NAME:
                lines.append(f"sha256.{name}={self.files[name]}")
        return "\n".join(lines) + "\n"


def build_loops(cfg: ScenarioConfig) -> list[Loop]:
    """Instantiate every enabled loop, raising one ConfigError listing all problems."""
    problems: list[str] = []
    loops = []
    for name in sorted(cfg.loops):
        r = Reader(cfg.loops[name], f"loops.{name}", problems)
        n_before = len(problems)
        dist = [d for d in cfg.disturbances if d.loop == name]
        try:
            loop = LOOP_CLASSES[name](r, cfg, dist)
        except (TypeError, ValueError) as exc:
            r.problem(str(exc))
            continue
        if len(problems) == n_before:
            loops.append(loop)
    if problems:
        raise ConfigError(problems)
    return loops


def validate(cfg: ScenarioConfig) -> None:
    """Raise ConfigError if any loop section is invalid; builds nothing persistent."""
    build_loops(cfg)


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None) -> RunSummary:
    """Run one scenario to its horizon.

    Loops are built and validated before anything is written, so a bad
    configuration leaves no files behind. With ``out_dir`` (or the
    scenario's ``output``) set, the trace, per-module CSV files and
    ``summary.txt`` are written there.
    """
    loops = build_loops(cfg)
    by_id = {lp.loop_id: lp for lp in loops}
    trace = TraceWriter()
    shared: dict[str, float] = {}
    snapshot = MappingProxyType(shared)

    for act in iter_schedule([lp.registration() for lp in loops], cfg.horizon_s):
        loop = by_id[act.loop_id]

        def emit(entity, signal, value, _t=act.time_ns, _lid=act.loop_id):
            trace.record(TraceRecord(_t, _lid, entity, signal, value))

        try:
            updates = loop.activate(act.time_ns, emit, snapshot)
        except Exception as exc:
            raise LoopRuntimeError(act.loop_id, act.time_ns / NS_PER_S, exc) from exc
        for key, value in updates.items():
            shared[f"{act.loop_id}.{key}"] = value

    summary = RunSummary(
        name=cfg.name,
        horizon_s=cfg.horizon_s,
        activations={lp.loop_id: lp.activations for lp in loops},
        digests={lp.loop_id: lp.digest() for lp in loops},
        trace_records=trace.count,
        trace_text=trace.text(),
        loops={lp.module: lp for lp in loops},
    )
    out = Path(out_dir) if out_dir is not None else cfg.output
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        summary.files[TRACE_NAME] = trace.write(out / TRACE_NAME)
        for lp in loops:
            summary.files.update(lp.write(out))
        (out / SUMMARY_NAME).write_bytes(summary.text().encode("ascii"))
    return summary


def run_many(
    configs: Sequence[ScenarioConfig], out_dirs: Sequence[str | Path | None], jobs: int = 1
) -> list[RunSummary | BaseException]:
    """Run independent scenarios on ``jobs`` worker threads.

    Results come back in input order; a failed scenario yields its exception
    instead of a summary so the other runs still complete.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")

    def one(pair):
        cfg, out = pair
        try:
            return run_scenario(cfg, out)
        except Exception as exc:
            return exc

    pairs = list(zip(configs, out_dirs))
    if jobs == 1:
        return [one(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, pairs))
