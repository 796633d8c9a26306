"""Command-line entry point.

``gridloop run`` executes whole scenarios. The module subcommands run one
loop family from a scenario file and print a short report. Exit codes: 0
on success, 1 when a problem is infeasible or a loop fails at run time, 2
on configuration or usage errors.
"""

from __future__ import annotations

import argparse
import io
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__, agc
from .errors import ConfigError, GridloopError, InfeasibleError, LoopRuntimeError
from .harness.config import ScenarioConfig, load_config
from .harness.runner import RunSummary, build_loops, run_many, run_scenario
from .harness.trace import fmt

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

MODULE_LOOPS = {
    "dispatch": ("ed", "uc"),
    "agc": ("agc",),
    "bes": ("bes",),
    "ev": ("ev",),
    "evcs": ("evcs",),
    "demand": ("demand",),
    "microgrid": ("microgrid",),
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, help="output directory (overrides the scenario's output)")
    common.add_argument("--seed", type=int, help="seed for every module, overriding [seeds]")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")

    p = argparse.ArgumentParser(prog="gridloop", description="Simulate power-grid control loops.")
    p.add_argument("--version", action="version", version=f"gridloop {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    run = sub.add_parser("run", parents=[common], help="run full scenarios")
    run.add_argument("--scenario", type=Path, action="append", required=True, help="scenario file; repeatable")
    run.add_argument("--jobs", type=int, default=1, help="scenarios run in parallel (default 1)")

    helps = {
        "dispatch": "economic dispatch / unit commitment",
        "agc": "two-area AGC with watermark detection",
        "bes": "battery regulation-market plan",
        "ev": "EV charging schedule",
        "evcs": "charging-station placement",
        "demand": "thermal load fleet control",
        "microgrid": "droop microgrid control",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, parents=[common], help=text)
        if name == "agc":
            sp.add_argument("--scenario", type=Path, help="scenario with a [loops.agc] section")
            sp.add_argument(
                "--calibrate",
                action="store_true",
                help="run the no-attack Monte-Carlo calibration and write watermark_thresholds.json",
            )
        else:
            sp.add_argument("--scenario", type=Path, required=True)
    return p


def _load(path: Path, seed: int | None) -> ScenarioConfig:
    cfg = load_config(path)
    return cfg if seed is None else cfg.with_seed(seed)


def _only(cfg: ScenarioConfig, names: Sequence[str], command: str) -> ScenarioConfig:
    loops = {k: v for k, v in cfg.loops.items() if k in names}
    if not loops:
        sections = " or ".join(f"[loops.{n}]" for n in names)
        raise ConfigError([f"{cfg.source}: '{command}' needs a {sections} section"])
    return replace(
        cfg,
        loops=loops,
        disturbances=[d for d in cfg.disturbances if d.loop in loops],
        attacks=cfg.attacks if "agc" in loops else [],
    )


def _report_run(s: RunSummary, out) -> None:
    print(f"scenario {s.name}: {sum(s.activations.values())} activations, {s.trace_records} trace records", file=out)
    for lid in sorted(s.activations):
        print(f"  {lid}: {s.activations[lid]} activations, state {s.digests[lid]}", file=out)
    print(f"  trace sha256 {s.trace_sha256}", file=out)


def _report_module(command: str, s: RunSummary, out) -> None:
    lp = s.loops
    if "ed" in lp and lp["ed"].last is not None:
        res = lp["ed"].last
        for gid, mw in res.outputs.items():
            print(f"unit {gid}: {fmt(mw)} MW", file=out)
        for bus, price in sorted(res.lmp.items()):
            print(f"LMP bus {bus}: {fmt(price)} $/MWh", file=out)
        if res.binding_lines:
            print(f"binding lines: {', '.join(map(str, res.binding_lines))}", file=out)
        print(f"cost {fmt(res.total_cost)} $", file=out)
    if "uc" in lp and lp["uc"].last is not None:
        sched = lp["uc"].last
        for gid, row in zip(sched.unit_ids, zip(*sched.on)):
            print(f"unit {gid}: on {''.join(str(int(f)) for f in row)}", file=out)
        print(f"commitment cost {fmt(sched.total_cost)} $ (startup {fmt(sched.startup_cost)} $)", file=out)
    if "agc" in lp:
        sim = lp["agc"].sim
        x = sim.x[0]
        print(f"freq_dev {fmt(float(x[0]))} / {fmt(float(x[1]))} pu, tie flow {fmt(float(x[6]))} pu", file=out)
        if sim.thresholds is not None and sim.evaluations:
            times, corr, var = sim.evaluation_arrays()
            alarms = (corr[0] < sim.thresholds.corr_low) | (var[0] > sim.thresholds.var_high)
            first = f", first at t={fmt(float(times[alarms.argmax()]))} s" if alarms.any() else ""
            print(f"watermark alarms {int(alarms.sum())} of {alarms.size} checks{first}", file=out)
    if "bes" in lp and lp["bes"].plan is not None:
        plan = lp["bes"].plan
        print(f"capacity {fmt(plan.capacity)} MW, revenue {fmt(plan.revenue)} $", file=out)
        print(f"performance floor met in {int(plan.floor_met.sum())} of {plan.floor_met.size} scenarios", file=out)
        if plan.no_feasible_capacity:
            print("no capacity meets the performance floor; offering zero", file=out)
    if "ev" in lp and lp["ev"].profile is not None:
        loop = lp["ev"]
        agg = loop.profile.aggregate(loop.base)
        print(f"valley objective {fmt(float(agg @ agg))} after {loop.profile.iterations} iterations", file=out)
        print("aggregate load " + " ".join(fmt(float(v)) for v in agg), file=out)
    if "evcs" in lp and lp["evcs"].result is not None:
        res = lp["evcs"].result
        for node, x, y in zip(res.candidates, res.x, res.y):
            print(f"node {node}: {'open' if x else 'closed'}, {y} spots", file=out)
        print(f"cost {fmt(res.cost)} $", file=out)
    if "demand" in lp and lp["demand"].tracker is not None:
        tr = lp["demand"].tracker
        print(f"energy {fmt(tr.energy)} kWh of budget {fmt(tr.plan.energy)} kWh", file=out)
        print(f"plan cost {fmt(tr.plan.cost)} $", file=out)
    if "microgrid" in lp:
        st = lp["microgrid"].state
        print(f"mode {st.mode.value}, frequency {fmt(st.frequency)} Hz, voltage {fmt(st.voltage)} pu", file=out)
        print("outputs " + " ".join(f"{i.id}={fmt(p)}" for i, p in zip(st.inverters, st.p_out)) + " pu", file=out)
        print(f"PCC import {fmt(st.pcc_flow)} pu", file=out)


def _calibrate(args, out) -> int:
    system = agc.AgcSystem()
    if args.scenario is not None:
        cfg = _only(_load(args.scenario, args.seed), ("agc",), "agc")
        system = build_loops(cfg)[0].sim.system
    th = agc.calibrate_thresholds(system)
    dest = args.out or Path(".")
    dest.mkdir(parents=True, exist_ok=True)
    path = dest / "watermark_thresholds.json"
    path.write_text(th.to_json())
    print(f"corr_low {fmt(th.corr_low)}, var_high {fmt(th.var_high)} -> {path}", file=out)
    return EXIT_OK


def _failure(exc: BaseException) -> tuple[int, str]:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG, str(exc)
    cause = exc.cause if isinstance(exc, LoopRuntimeError) else exc
    if isinstance(cause, InfeasibleError):
        where = f" (in {exc.loop_id} at t={fmt(exc.time_s)} s)" if isinstance(exc, LoopRuntimeError) else ""
        return EXIT_FAIL, f"infeasible: binding constraint '{cause.constraint}': {cause}{where}"
    return EXIT_FAIL, f"error: {exc}"


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    out = io.StringIO() if args.quiet else sys.stdout
    try:
        if args.command == "run":
            if args.jobs < 1:
                raise ConfigError(["--jobs must be >= 1"])
            # Every scenario is validated before any of them writes output.
            cfgs = [_load(p, args.seed) for p in args.scenario]
            for cfg in cfgs:
                build_loops(cfg)
            if args.out is None:
                dirs = [c.output for c in cfgs]
            elif len(cfgs) == 1:
                dirs = [args.out]
            else:
                dirs = [args.out / c.name for c in cfgs]
            code = EXIT_OK
            for cfg, res in zip(cfgs, run_many(cfgs, dirs, args.jobs)):
                if isinstance(res, BaseException):
                    c, msg = _failure(res)
                    print(f"scenario {cfg.name}: {msg}", file=sys.stderr)
                    code = max(code, c)
                else:
                    _report_run(res, out)
            return code
        if args.command == "agc" and args.calibrate:
            return _calibrate(args, out)
        if args.scenario is None:
            raise ConfigError([f"'{args.command}' needs --scenario (or --calibrate)"])
        cfg = _only(_load(args.scenario, args.seed), MODULE_LOOPS[args.command], args.command)
        summary = run_scenario(cfg, args.out if args.out is not None else cfg.output)
        _report_module(args.command, summary, out)
        return EXIT_OK
    except (ConfigError, GridloopError) as exc:
        code, msg = _failure(exc)
        print(msg, file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
