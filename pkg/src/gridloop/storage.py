"""Battery participation in a pay-for-performance regulation market.

The battery bids a regulation capacity ``C`` and then follows ``C * r[k]``
as closely as its power rating and state of charge allow. Revenue is
``price * C * rho`` where ``rho`` is the tracking score; throughput aging is
charged against it. Choosing ``C`` is a one-dimensional search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dispatch import required_scenarios
from .errors import BoundViolationError

SOC_TOL = 1e-9
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class BesConfig:
    capacity_max: float
    power_rating: float
    soc_min: float
    soc_max: float
    efficiency: float = 1.0
    interval: float = 1.0
    aging_coeff: float = 0.0
    soc_init: float | None = None
    """Starting energy in MWh; the middle of the band when omitted."""

    def __post_init__(self):
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must be in (0, 1]")
        if not self.soc_min < self.soc_max:
            raise ValueError("soc_min must be below soc_max")
        if not self.power_rating > 0:
            raise ValueError("power_rating must be positive")
        if self.capacity_max < 0 or self.interval <= 0 or self.aging_coeff < 0:
            raise ValueError("capacity_max, interval and aging_coeff must be non-negative (interval > 0)")
        if self.soc_init is not None and not self.soc_min <= self.soc_init <= self.soc_max:
            raise ValueError("soc_init must lie within [soc_min, soc_max]")

    @property
    def initial_soc(self) -> float:
        if self.soc_init is not None:
            return self.soc_init
        return 0.5 * (self.soc_min + self.soc_max)


@dataclass(frozen=True)
class RegulationMarket:
    price: float
    performance_floor: float
    signal: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "signal", tuple(float(v) for v in self.signal))
        if any(not -1.0 <= v <= 1.0 for v in self.signal):
            raise ValueError("regulation signal entries must lie in [-1, 1]")
        if not 0.0 <= self.performance_floor <= 1.0:
            raise ValueError("performance_floor must lie in [0, 1]")


@dataclass(frozen=True)
class BesPlan:
    """Chosen capacity and the resulting dispatch in every scenario.

    Arrays are indexed ``[scenario, k]``; ``soc`` has one more column than
    ``dispatch`` (the initial energy).
    """

    capacity: float
    dispatch: np.ndarray
    soc: np.ndarray
    score: np.ndarray
    revenue: float
    """Mean over scenarios of ``price * C * rho - aging``."""
    floor_met: np.ndarray
    no_feasible_capacity: bool = False


def soc_step(e_prev: float, b: float, cfg: BesConfig) -> float:
    """Energy after one interval at power ``b`` (positive charges)."""
    if abs(b) > cfg.power_rating + SOC_TOL:
        raise ValueError(f"|b| = {abs(b)} exceeds the power rating {cfg.power_rating}")
    dk, g = cfg.interval, cfg.efficiency
    e = e_prev + dk * g * max(b, 0.0) - dk * max(-b, 0.0) / g
    if e > cfg.soc_max + SOC_TOL:
        raise BoundViolationError(f"state of charge {e} MWh above {cfg.soc_max}", "upper", e)
    if e < cfg.soc_min - SOC_TOL:
        raise BoundViolationError(f"state of charge {e} MWh below {cfg.soc_min}", "lower", e)
    return e


def performance_score(C: float, b, r) -> float:
    """Normalized L1 tracking accuracy ``1 - sum|b - C r| / (C sum|r|)`` in [0, 1]."""
    b = np.asarray(b, dtype=float)
    r = np.asarray(r, dtype=float)
    if b.shape != r.shape:
        raise ValueError("dispatch and signal lengths differ")
    if C < 0:
        raise ValueError("capacity must be non-negative")
    idle = not np.any(b)
    denom = C * float(np.sum(np.abs(r)))
    if C == 0 or denom == 0:
        return 1.0 if idle else 0.0
    rho = 1.0 - float(np.sum(np.abs(b - C * r))) / denom
    return min(1.0, max(0.0, rho))


def aging_cost(b, cfg: BesConfig) -> float:
    return cfg.aging_coeff * cfg.interval * float(np.sum(np.abs(np.asarray(b, dtype=float))))


def track_signal(C: float, r, cfg: BesConfig) -> tuple[np.ndarray, np.ndarray]:
    """Clipped-tracking dispatch: ``C r[k]`` limited by power and energy headroom."""
    dk, g = cfg.interval, cfg.efficiency
    e = cfg.initial_soc
    bs, es = [], [e]
    for rk in r:
        want = min(max(C * rk, -cfg.power_rating), cfg.power_rating)
        if want > 0:
            b = min(want, (cfg.soc_max - e) / (dk * g))
        elif want < 0:
            b = max(want, -(e - cfg.soc_min) * g / dk)
        else:
            b = 0.0
        b = _land_inside(e, b, cfg)
        e = soc_step(e, b, cfg)
        bs.append(b)
        es.append(e)
    return np.array(bs), np.array(es)


def _land_inside(e, b, cfg):
    """Shrink ``b`` by ulps until the next state is exactly inside the band."""
    dk, g = cfg.interval, cfg.efficiency
    for _ in range(64):
        nxt = e + dk * g * max(b, 0.0) - dk * max(-b, 0.0) / g
        if cfg.soc_min <= nxt <= cfg.soc_max:
            return b
        b = math.nextafter(b, 0.0)
    return 0.0


@dataclass(frozen=True)
class _Eval:
    C: float
    objective: float
    n_met: int
    dispatch: np.ndarray
    soc: np.ndarray
    score: np.ndarray
    met: np.ndarray


def _evaluate(C, cfg, markets) -> _Eval:
    bs, es, rhos, net, met = [], [], [], [], []
    for m in markets:
        b, e = track_signal(C, m.signal, cfg)
        rho = performance_score(C, b, m.signal)
        bs.append(b)
        es.append(e)
        rhos.append(rho)
        net.append(m.price * C * rho - aging_cost(b, cfg))
        met.append(rho >= m.performance_floor)
    met = np.array(met)
    return _Eval(C, float(np.mean(net)), int(met.sum()), np.array(bs), np.array(es), np.array(rhos), met)


def optimize_bes_plan(
    cfg: BesConfig,
    markets: Sequence[RegulationMarket],
    epsilon: float = 0.0,
    *,
    tol: float = 1e-7,
) -> BesPlan:
    """Pick the capacity bid maximizing mean net revenue under the score floor.

    The floor must hold on at least ``ceil((1 - epsilon) N)`` scenarios.
    Feasibility is assumed to shrink as ``C`` grows (more clipping means worse
    tracking), so the largest feasible bid is found by bisection; the
    objective is then maximized by golden-section search on ``[0, C_feas]``.
    Because revenue often flattens once the battery saturates, the final
    answer is the smallest bid reaching the best value found. The zero bid
    is always a candidate, so the plan never earns less than staying out.
    """
    if not markets:
        raise ValueError("at least one market scenario is required")
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must be in [0, 1)")
    lengths = {len(m.signal) for m in markets}
    if len(lengths) != 1:
        raise ValueError("all scenarios must have the same signal length")
    need = required_scenarios(len(markets), epsilon)
    cache: dict[float, _Eval] = {}

    def ev(C):
        if C not in cache:
            cache[C] = _evaluate(C, cfg, markets)
        return cache[C]

    def feasible(C):
        return ev(C).n_met >= need

    c_max = cfg.capacity_max
    span_tol = tol * max(1.0, c_max)
    if c_max == 0 or feasible(c_max):
        c_feas = c_max
    else:
        lo, hi = 0.0, c_max
        if not feasible(span_tol):
            return _plan(ev(0.0), no_feasible=True)
        lo = span_tol
        while hi - lo > span_tol:
            mid = 0.5 * (lo + hi)
            if feasible(mid):
                lo = mid
            else:
                hi = mid
        c_feas = lo

    f = lambda C: ev(C).objective  # noqa: E731
    a, b = 0.0, c_feas
    x1, x2 = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    while b - a > span_tol:
        if f(x1) < f(x2):
            a, x1 = x1, x2
            x2 = a + _GOLDEN * (b - a)
        else:
            b, x2 = x2, x1
            x1 = b - _GOLDEN * (b - a)
    candidates = [0.0, 0.5 * (a + b), c_feas]
    best = max(candidates, key=lambda C: (f(C), -C))
    target = f(best) - 1e-9 * max(1.0, abs(f(best)))
    lo, hi = 0.0, best
    if f(0.0) < target:
        while hi - lo > span_tol:
            mid = 0.5 * (lo + hi)
            if f(mid) >= target and feasible(mid):
                hi = mid
            else:
                lo = mid
        best = hi
    else:
        best = 0.0
    return _plan(ev(best))


def _plan(e: _Eval, no_feasible: bool = False) -> BesPlan:
    return BesPlan(
        capacity=e.C,
        dispatch=e.dispatch,
        soc=e.soc,
        score=e.score,
        revenue=e.objective,
        floor_met=e.met,
        no_feasible_capacity=no_feasible,
    )
