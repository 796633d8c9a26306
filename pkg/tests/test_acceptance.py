"""Acceptance gate: eleven end-to-end criteria at their stated tolerances.

Each test prints one ``PASS``/``FAIL`` line with the measured numbers, then
asserts. Run ``pytest tests/test_acceptance.py -v`` to see the report.
"""

import contextlib
import io
import time
from dataclasses import replace

import numpy as np
import pytest

from gridloop import agc, demand, dispatch, ev, microgrid, storage
from gridloop.cli import main
from gridloop.harness import load_config, run_scenario
from oracles import enumerate_commitment, grid_search_dispatch, triangle_instance
from scenarios import EVCS, SLOW_LOOPS, agc_ed_ev
from test_dispatch import _ed_by_linprog, _uc_fixture
from test_ev import BASE, FLEET, enumerate_placements, placement_fixture, qp_oracle
from test_storage import constrained_fixture, grid_search_capacity


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number:>2} {title}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, f"criterion {number} failed: {detail}"

    return emit


def test_01_dispatch_matches_grid_search(report):
    worst_mw = worst_cost = worst_t = 0.0
    for seed in range(5):
        gens, load, net = triangle_instance(seed)
        t0 = time.perf_counter()
        res = dispatch.economic_dispatch(gens, load, net)
        worst_t = max(worst_t, time.perf_counter() - t0)
        cost, outputs = grid_search_dispatch(gens, load, net)
        worst_mw = max(worst_mw, float(np.max(np.abs(np.array([res.outputs[g.id] for g in gens]) - outputs))))
        worst_cost = max(worst_cost, abs(res.total_cost - cost))
    ok = worst_mw <= 0.05 and worst_cost <= 0.5 and worst_t < 1.0
    report(1, "dispatch oracle", ok, f"max |dP| {worst_mw:.4f} MW, max |dcost| {worst_cost:.4f} $, slowest {worst_t:.3f} s")


def test_02_unit_commitment_exact(report):
    gens, load = _uc_fixture()
    t0 = time.perf_counter()
    sched = dispatch.unit_commitment(gens, load)
    elapsed = time.perf_counter() - t0
    cost, best = enumerate_commitment(gens, load, _ed_by_linprog(gens))
    ok = sched.on == best and abs(sched.total_cost - cost) <= 1e-6 and elapsed < 5.0
    report(2, "unit commitment", ok, f"cost {sched.total_cost:.6f} vs {cost:.6f} over 4096 schedules, {elapsed:.3f} s")


def test_03_agc_regulation(report):
    t0 = time.perf_counter()
    sim = agc.AgcSimulator(
        agc.AgcSystem(),
        [0],
        watermark_variance=None,
        noise=agc.NoiseSpec(0.0, 0.0, 0.0),
        load_steps=[agc.LoadStep(0.0, 0, 0.1)],
        monitor=None,
    ).run(120.0)
    elapsed = time.perf_counter() - t0
    x = sim.x[0]
    freq, tie = max(abs(x[0]), abs(x[1])), abs(x[6])
    ok = freq < 1e-3 and tie < 1e-3 and elapsed < 10.0
    report(3, "AGC regulation", ok, f"|freq_dev| {freq:.2e} pu, |dP_tie| {tie:.2e} pu at 120 s, {elapsed:.2f} s")


def test_04_watermark_detector(report):
    t0 = time.perf_counter()
    frozen = agc.default_thresholds()
    recalibrated = agc.calibrate_thresholds()
    false_alarm = agc.alarm_rate(range(200), 60.0)
    # Replay the quiet first 30 s on both channels after a load step at 30 s.
    replay = agc.SensorAttack("replay", 30.0, "both", 30.0, 60.0)
    detection = agc.alarm_rate(
        range(200), 60.0, attacks=[replay], load_steps=[agc.LoadStep(30.0, 0, 0.1)], after=30.0
    )
    elapsed = time.perf_counter() - t0
    ok = recalibrated == frozen and false_alarm <= 0.05 and detection >= 0.95 and elapsed < 300
    report(
        4,
        "watermark detector",
        ok,
        f"false alarms {false_alarm:.3f}, replay detection {detection:.3f}, "
        f"fixture reproduced {recalibrated == frozen}, {elapsed:.1f} s",
    )


def test_05_soc_dynamics(report):
    cfg = storage.BesConfig(10, 2, 0, 10, 0.9)
    charge = abs(storage.soc_step(5, 1, cfg) - 5.9)
    discharge = abs(storage.soc_step(5, -1, cfg) - (5 - 1 / 0.9))
    bes_cfg, markets = constrained_fixture()
    markets = markets + [storage.RegulationMarket(100, 0.5, [0.5, -1, 0.3, 1, -0.2, 0.8])]
    plan = storage.optimize_bes_plan(bes_cfg, markets, epsilon=0.5)
    replays = True
    for s in range(len(markets)):
        e = plan.soc[s, 0]
        for k, b in enumerate(plan.dispatch[s]):
            e = storage.soc_step(e, b, bes_cfg)
            replays &= e == plan.soc[s, k + 1]
    ok = charge <= 1e-12 and discharge <= 1e-12 and replays
    report(5, "SOC dynamics", ok, f"hand-case errors {charge:.1e}, {discharge:.1e}; bit-identical replay {replays}")


def test_06_bes_optimizer(report):
    cfg, markets = constrained_fixture()
    plan = storage.optimize_bes_plan(cfg, markets)
    c_grid, _ = grid_search_capacity(cfg, markets)
    zero_revenue = 0.0  # a zero bid neither earns nor ages
    gap = abs(plan.capacity - c_grid)
    ok = gap <= 0.02 and plan.revenue >= zero_revenue
    report(6, "BES optimizer", ok, f"C* {plan.capacity:.4f} MW vs grid {c_grid:.2f} MW, revenue {plan.revenue:.4f} $")


def test_07_ev_valley_filling(report):
    f_qp, _ = qp_oracle(FLEET, BASE)
    cen = ev.centralized_schedule(FLEET, BASE)
    dec = ev.decentralized_schedule(FLEET, BASE)
    gap_c = abs(ev.valley_objective(cen.rates, BASE) - f_qp)
    gap_d = abs(ev.valley_objective(dec.rates, BASE) - f_qp)
    agg = cen.aggregate(BASE)
    interior = [
        k
        for k in range(BASE.size)
        if any(1e-6 < cen.rates[i, k] < ev.charging_bound(s, k) - 1e-6 for i, s in enumerate(FLEET))
    ]
    spread = float(np.ptp(agg[interior]))
    single = ev.centralized_schedule([ev.EvSession(0, 0, 3, 2.0, 1.0, 4.0, 0.0, 1.0)], np.zeros(4))
    uniform = single.rates[0].tolist() == [1.0] * 4
    ok = gap_c <= 1e-4 and gap_d <= 1e-4 and spread <= 1e-4 and uniform
    report(
        7,
        "EV valley filling",
        ok,
        f"objective gaps {gap_c:.1e} / {gap_d:.1e}, interior spread {spread:.1e} kW, uniform single EV {uniform}",
    )


def test_08_evcs_placement(report, tmp_path):
    prob = placement_fixture()
    got = ev.evcs_place(prob)
    cost, x, y = enumerate_placements(prob)
    exact = (got.x, got.y, got.cost) == (x, y, cost)
    path = tmp_path / "evcs.toml"
    path.write_text(EVCS.format(budget=10.0))
    err = io.StringIO()
    with contextlib.redirect_stderr(err):
        code = main(["evcs", "--quiet", "--scenario", str(path), "--out", str(tmp_path / "o")])
    named = "binding constraint 'budget'" in err.getvalue()
    ok = exact and code == 1 and named
    report(8, "EVCS placement", ok, f"x={got.x} y={got.y} cost {got.cost} vs oracle {cost}; budget fixture exit {code}")


def demand_fixture():
    hours = np.arange(24)
    ambient = 27 + 6 * np.sin((hours - 9) / 24 * 2 * np.pi)
    price = np.where((hours >= 14) & (hours <= 19), 0.30, np.where(hours < 7, 0.08, 0.15))
    return demand.generate_fleet(20, 0), price, ambient, 200.0


def test_09_demand_control(report):
    fleet, price, ambient, energy = demand_fixture()
    plan = demand.lp_relaxed_schedule(fleet, price, ambient, energy)
    run = demand.simulate_tracking(fleet, plan)
    low = np.array([h.comfort_low - h.deadband for h in fleet])
    high = np.array([h.comfort_high + h.deadband for h in fleet])
    comfort = bool(np.all(run.temps >= low) and np.all(run.temps <= high))
    energy_err = abs(run.energy - energy) / energy
    mae = run.mean_abs_error / run.fleet_power
    ok = comfort and energy_err <= 0.02 and mae <= 0.10
    report(
        9,
        "demand control",
        ok,
        f"comfort held {comfort}, energy {run.energy:.2f} kWh ({100 * energy_err:.2f}% off), "
        f"tracking error {100 * mae:.2f}% of fleet power",
    )


def test_10_microgrid(report):
    inv = (microgrid.DroopInverter("a", 0.5, 0.05), microgrid.DroopInverter("b", 1.0, 0.05))
    s = microgrid.droop_steady_state(microgrid.MicrogridState(inv, p_load=0.6))
    ratio_err = abs(s.p_out[0] / s.p_out[1] - 2.0)
    r = microgrid.secondary_restore(s)
    freq_err = abs(r.frequency - 60.0)
    share_err = microgrid.sharing_error(s.p_out, r.p_out)
    rated = tuple(replace(i, p_max=1.0) for i in inv)
    g = microgrid.MicrogridState(rated, p_load=0.8, mode="grid_connected")
    pcc_err = abs(microgrid.tertiary_setpoint(g, 0.25).pcc_flow - 0.25)
    ok = ratio_err <= 1e-9 and freq_err < 1e-6 and share_err <= 1e-6 and pcc_err <= 1e-6
    report(
        10,
        "microgrid hierarchy",
        ok,
        f"sharing ratio error {ratio_err:.1e}, |w - w*| {freq_err:.1e} Hz, "
        f"sharing drift {share_err:.1e}, PCC error {pcc_err:.1e} pu",
    )


def test_11_determinism(report, tmp_path):
    texts = {"agc": agc_ed_ev(120, attack=True), "slow": SLOW_LOOPS, "evcs": EVCS.format(budget=200.0)}
    identical, n_files = True, 0
    for name, text in texts.items():
        runs = []
        for rep in ("a", "b"):
            out = tmp_path / name / rep
            run_scenario(load_config(f"{name}.toml", text=text), out)
            runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        identical &= runs[0] == runs[1]
        n_files += len(runs[0])
    report(11, "determinism", identical, f"{n_files} output files across {len(texts)} scenarios byte-identical {identical}")
