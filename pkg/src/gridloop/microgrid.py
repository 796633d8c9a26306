"""Quasi-steady-state hierarchical control of a droop-controlled microgrid.

Inverters share one electrical bus. Each follows the droop laws::

    omega = omega_i* + d_omega_i - mp_i (P_i - P_i*)
    V     = V_i*     + d_v_i     - mq_i (Q_i - Q_i*)

Islanded, frequency and voltage are common and the outputs balance the
load; grid-connected, the host grid fixes both and the point of common
coupling (PCC) carries the mismatch. Secondary control shifts every
inverter's offset by the same amount, which moves frequency (voltage)
without changing how power is shared. Tertiary control moves the power
setpoints to steer the PCC exchange.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, InfeasibleError


class Mode(str, Enum):
    ISLANDED = "islanded"
    GRID_CONNECTED = "grid_connected"


@dataclass(frozen=True)
class DroopInverter:
    id: int | str
    droop_mp: float
    droop_mq: float
    omega_nom: float = 60.0
    v_nom: float = 1.0
    p_set: float = 0.0
    q_set: float = 0.0
    d_omega: float = 0.0
    d_v: float = 0.0
    p_max: float = math.inf
    """Real power capability, pu; also the tertiary allocation weight."""
    d_v_max: float = 0.1
    """Largest secondary voltage offset magnitude, pu."""

    def __post_init__(self):
        if not (self.droop_mp > 0 and self.droop_mq > 0):
            raise ValueError(f"inverter {self.id}: droop gains must be positive")
        if not self.p_max > 0:
            raise ValueError(f"inverter {self.id}: p_max must be positive")


@dataclass(frozen=True)
class MicrogridState:
    inverters: tuple[DroopInverter, ...]
    p_load: float
    q_load: float = 0.0
    mode: Mode = Mode.ISLANDED
    omega_ref: float = 60.0
    """Nominal system frequency; the grid frequency when connected."""
    v_ref: float = 1.0
    pcc_flow: float = 0.0
    """Real power imported from the host grid, pu."""
    frequency: float | None = None
    voltage: float | None = None
    p_out: tuple[float, ...] | None = None
    q_out: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "inverters", tuple(self.inverters))
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.inverters:
            raise ValueError("a microgrid needs at least one inverter")

    @property
    def voltages(self) -> tuple[float, ...]:
        return (self.voltage,) * len(self.inverters)

    def sharing_ratios(self) -> np.ndarray:
        p = np.asarray(self.p_out, dtype=float)
        return p / p.sum() if p.sum() != 0 else np.zeros_like(p)


def _arrays(state):
    inv = state.inverters
    mp = np.array([i.droop_mp for i in inv])
    mq = np.array([i.droop_mq for i in inv])
    w0 = np.array([i.omega_nom + i.d_omega for i in inv])
    v0 = np.array([i.v_nom + i.d_v for i in inv])
    ps = np.array([i.p_set for i in inv])
    qs = np.array([i.q_set for i in inv])
    return mp, mq, w0, v0, ps, qs


def droop_steady_state(state: MicrogridState) -> MicrogridState:
    """Common-bus droop equilibrium; fills ``frequency``, ``voltage``, outputs and PCC flow."""
    mp, mq, w0, v0, ps, qs = _arrays(state)
    if state.mode is Mode.ISLANDED:
        cap = sum(i.p_max for i in state.inverters)
        if state.p_load > cap:
            raise InfeasibleError(
                f"load {state.p_load} pu exceeds aggregate inverter capacity {cap} pu", "capacity"
            )
        omega = (float(np.sum(w0 / mp)) + float(ps.sum()) - state.p_load) / float(np.sum(1.0 / mp))
        volt = (float(np.sum(v0 / mq)) + float(qs.sum()) - state.q_load) / float(np.sum(1.0 / mq))
    else:
        omega, volt = state.omega_ref, state.v_ref
    p = ps + (w0 - omega) / mp
    q = qs + (v0 - volt) / mq
    pcc = 0.0 if state.mode is Mode.ISLANDED else state.p_load - float(p.sum())
    return replace(
        state,
        frequency=float(omega),
        voltage=float(volt),
        p_out=tuple(map(float, p)),
        q_out=tuple(map(float, q)),
        pcc_flow=pcc,
    )


def _shift(state, dw, dv):
    return replace(
        state,
        inverters=tuple(replace(i, d_omega=i.d_omega + dw, d_v=i.d_v + dv) for i in state.inverters),
    )


def secondary_restore(
    state: MicrogridState,
    v_target: float | None = None,
    *,
    gain: float = 0.5,
    tol: float = 1e-9,
    max_iter: int = 1000,
) -> MicrogridState:
    """Centralized integral restoration of frequency and the critical-bus voltage.

    Each round measures the droop equilibrium and adds ``gain`` times the
    frequency error (voltage error) to every inverter's offset. A uniform
    offset leaves the power split untouched. ``v_target`` defaults to the
    system reference voltage. Returns the restored steady state.
    """
    if not 0 < gain <= 1:
        raise ValueError("gain must be in (0, 1]")
    v_target = state.v_ref if v_target is None else v_target
    s = droop_steady_state(state)
    if s.mode is Mode.GRID_CONNECTED:
        return s
    for it in range(max_iter):
        ew = state.omega_ref - s.frequency
        ev = v_target - s.voltage
        if abs(ew) < tol and abs(ev) < tol:
            return s
        s = droop_steady_state(_shift(s, gain * ew, gain * ev))
        for inv in s.inverters:
            if abs(inv.d_v) > inv.d_v_max + 1e-12:
                raise InfeasibleError(
                    f"voltage target {v_target} pu needs offset {inv.d_v:.4g} pu at inverter "
                    f"{inv.id}, beyond its limit {inv.d_v_max}",
                    "voltage",
                    inverter=inv.id,
                )
    raise ConvergenceError("secondary restoration did not converge", abs(state.omega_ref - s.frequency), max_iter)


def tertiary_setpoint(state: MicrogridState, pcc_target: float) -> MicrogridState:
    """Move the power setpoints so the grid-connected PCC import equals ``pcc_target``.

    The required change in total output is split in proportion to each
    inverter's ``p_max`` (equally when any capability is unbounded).
    Returns the recomputed steady state.
    """
    if state.mode is not Mode.GRID_CONNECTED:
        raise ValueError("tertiary control needs a grid-connected microgrid")
    s = droop_steady_state(state)
    need = s.pcc_flow - pcc_target
    caps = np.array([i.p_max for i in s.inverters])
    total_out = float(np.sum(s.p_out)) + need
    if np.all(np.isfinite(caps)):
        if total_out > caps.sum() + 1e-12 or total_out < -caps.sum() - 1e-12:
            raise InfeasibleError(
                f"PCC target {pcc_target} pu needs {total_out:.6g} pu from inverters rated "
                f"{caps.sum():.6g} pu in total",
                "capacity",
            )
        weights = caps / caps.sum()
    else:
        weights = np.full(caps.size, 1.0 / caps.size)
    inv = tuple(replace(i, p_set=i.p_set + need * w) for i, w in zip(s.inverters, weights))
    return droop_steady_state(replace(s, inverters=inv))


def island(state: MicrogridState) -> MicrogridState:
    """Open the PCC breaker and settle on the islanded droop equilibrium."""
    return droop_steady_state(replace(state, mode=Mode.ISLANDED))


def reconnect(state: MicrogridState) -> MicrogridState:
    return droop_steady_state(replace(state, mode=Mode.GRID_CONNECTED))


def sharing_error(before: Sequence[float], after: Sequence[float]) -> float:
    b = np.asarray(before, dtype=float)
    a = np.asarray(after, dtype=float)
    return float(np.max(np.abs(b / b.sum() - a / a.sum())))
