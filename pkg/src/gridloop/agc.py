"""Two-area automatic generation control with dynamic watermarking.

Each area is one equivalent governor-turbine-generator::

    M dw/dt    = Pm - dPL - D w - Ptie_out
    Tg dPv/dt  = Pset - w / R - Pv
    Tt dPm/dt  = Pv - Pm
    dPtie/dt   = T (w1 - w2)

with ``Ptie_out = +Ptie`` for area 1 and ``-Ptie`` for area 2. All
quantities are per-unit deviations from the operating point. The AGC forms
``ACE = Ptie_out + B w``, smooths it with a first-order filter (SACE) and
applies ``Pset = -(kp SACE + ki integral(SACE)) + e[k]`` where ``e`` is the
private watermark.

Integration is explicit Euler at the control period ``dt``. The detector
uses the Euler map itself as its nominal model, so in the absence of
attacks its innovations are exact linear functions of the process and
sensor noise.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from importlib import resources
from typing import Sequence

import numpy as np

from . import rng as crng

N_STATE = 7  # w1, w2, Pv1, Pv2, Pm1, Pm2, Ptie
N_MEAS = 3  # w1, w2, Ptie
MAX_DT = 0.1
MIN_WINDOW = 50


@dataclass(frozen=True)
class AreaDynamics:
    inertia: float = 10.0
    damping: float = 1.0
    droop: float = 0.05
    governor_tc: float = 0.2
    turbine_tc: float = 0.5
    freq_dev: float = 0.0
    mech_power: float = 0.0
    valve: float = 0.0

    def __post_init__(self):
        if not (self.inertia > 0 and self.droop > 0 and self.governor_tc > 0 and self.turbine_tc > 0):
            raise ValueError("inertia, droop and time constants must be positive")


@dataclass(frozen=True)
class AgcSystem:
    areas: tuple[AreaDynamics, AreaDynamics] = (AreaDynamics(), AreaDynamics())
    tie_stiffness: float = 2.0
    tie_flow: float = 0.0
    bias: tuple[float, float] = (21.0, 21.0)
    smoothing_tc: float = 2.0
    kp: float = 0.1
    ki: float = 0.05
    setpoint: tuple[float, float] = (0.0, 0.0)
    sace: tuple[float, float] = (0.0, 0.0)
    integral: tuple[float, float] = (0.0, 0.0)
    dt: float = 0.02
    agc_enabled: bool = True
    step: int = 0

    def __post_init__(self):
        if not 0 < self.dt <= MAX_DT:
            raise ValueError(f"dt must be in (0, {MAX_DT}] s")
        if any(b <= 0 for b in self.bias):
            raise ValueError("bias must be positive")
        if self.smoothing_tc <= 0:
            raise ValueError("smoothing_tc must be positive")

    @property
    def pi_gains(self) -> tuple[float, float]:
        return self.kp, self.ki

    def state_vector(self) -> np.ndarray:
        a, b = self.areas
        return np.array(
            [a.freq_dev, b.freq_dev, a.valve, b.valve, a.mech_power, b.mech_power, self.tie_flow]
        )

    def with_state(self, x) -> AgcSystem:
        a, b = self.areas
        return replace(
            self,
            areas=(
                replace(a, freq_dev=float(x[0]), valve=float(x[2]), mech_power=float(x[4])),
                replace(b, freq_dev=float(x[1]), valve=float(x[3]), mech_power=float(x[5])),
            ),
            tie_flow=float(x[6]),
        )

    def params(self) -> _Params:
        a, b = self.areas
        return _Params(
            M=np.array([a.inertia, b.inertia]),
            D=np.array([a.damping, b.damping]),
            R=np.array([a.droop, b.droop]),
            Tg=np.array([a.governor_tc, b.governor_tc]),
            Tt=np.array([a.turbine_tc, b.turbine_tc]),
            T=self.tie_stiffness,
            B=np.array(self.bias, dtype=float),
            tau=self.smoothing_tc,
            kp=self.kp,
            ki=self.ki,
        )


@dataclass(frozen=True)
class _Params:
    M: np.ndarray
    D: np.ndarray
    R: np.ndarray
    Tg: np.ndarray
    Tt: np.ndarray
    T: float
    B: np.ndarray
    tau: float
    kp: float
    ki: float


def _derivative(x, pset, load, p: _Params):
    """Plant right-hand side; broadcasts over leading batch axes."""
    w, pv, pm, ptie = x[..., 0:2], x[..., 2:4], x[..., 4:6], x[..., 6]
    tie_out = np.stack([ptie, -ptie], axis=-1)
    dw = (pm - load - p.D * w - tie_out) / p.M
    dpv = (pset - w / p.R - pv) / p.Tg
    dpm = (pv - pm) / p.Tt
    dtie = p.T * (w[..., 0] - w[..., 1])
    return np.concatenate([dw, dpv, dpm, dtie[..., None]], axis=-1)


def _euler(x, pset, load, p, dt):
    return x + dt * _derivative(x, pset, load, p)


def step_dynamics(sys: AgcSystem, load_change, dt: float | None = None) -> AgcSystem:
    """Advance the plant one explicit-Euler step under the current setpoints."""
    dt = sys.dt if dt is None else dt
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = _euler(
        sys.state_vector(),
        np.asarray(sys.setpoint, dtype=float),
        np.asarray(load_change, dtype=float),
        sys.params(),
        dt,
    )
    return sys.with_state(x)


def area_control_error(freq, tie_flow, bias):
    """ACE per area from measured frequency deviations and tie flow (area 1 -> 2)."""
    freq = np.asarray(freq, dtype=float)
    tie = np.asarray(tie_flow, dtype=float)
    return np.stack([tie, -tie], axis=-1) + np.asarray(bias) * freq


def _control(ace, sace, integral, p: _Params, dt):
    sace = sace + (dt / p.tau) * (ace - sace)
    integral = integral + dt * sace
    return sace, integral, -(p.kp * sace + p.ki * integral)


@dataclass(frozen=True)
class WatermarkKey:
    """Private watermark: ``e[k]`` is i.i.d. normal with variance ``variance`` per area."""

    seed: int
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("watermark variance must be positive")

    @property
    def key(self) -> int:
        return crng.derive_key(self.seed, "watermark")

    def sample(self, k) -> np.ndarray:
        """Watermark for both areas at step(s) ``k``; shape ``(..., 2)``."""
        k = np.asarray(k, dtype=np.uint64)[..., None]
        counters = k * np.uint64(2) + np.arange(2, dtype=np.uint64)
        return math.sqrt(self.variance) * crng.normal(self.key, counters)


def agc_control_step(
    sys: AgcSystem,
    measured_freq,
    measured_tie: float,
    key: WatermarkKey | None = None,
) -> AgcSystem:
    """One AGC update: ACE -> SACE -> PI, plus the watermark sample for this step.

    With ``kp = 0`` and a settled SACE the setpoint moves by
    ``-ki * SACE * dt`` per step.
    """
    p = sys.params()
    if not sys.agc_enabled:
        return replace(sys, step=sys.step + 1)
    ace = area_control_error(measured_freq, measured_tie, p.B)
    sace, integral, u = _control(
        ace, np.asarray(sys.sace, dtype=float), np.asarray(sys.integral, dtype=float), p, sys.dt
    )
    if key is not None:
        u = u + key.sample(sys.step)
    return replace(
        sys,
        sace=tuple(map(float, sace)),
        integral=tuple(map(float, integral)),
        setpoint=tuple(map(float, u)),
        step=sys.step + 1,
    )


# ---------------------------------------------------------------- attacks


class AttackKind(str, Enum):
    NONE = "none"
    BIAS = "bias"
    SCALE = "scale"
    REPLAY = "replay"
    NOISE = "noise"


class AttackTarget(str, Enum):
    FREQ = "freq"
    TIE_FLOW = "tie_flow"
    BOTH = "both"


_TARGET_CHANNELS = {
    AttackTarget.FREQ: [0, 1],
    AttackTarget.TIE_FLOW: [2],
    AttackTarget.BOTH: [0, 1, 2],
}


@dataclass(frozen=True)
class SensorAttack:
    kind: AttackKind = AttackKind.NONE
    magnitude: float = 0.0
    target: AttackTarget = AttackTarget.FREQ
    start_time: float = 0.0
    end_time: float = math.inf
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        object.__setattr__(self, "target", AttackTarget(self.target))
        if not self.start_time < self.end_time:
            raise ValueError("attack start_time must precede end_time")
        if self.kind is AttackKind.REPLAY and not self.magnitude > 0:
            raise ValueError("replay delay (magnitude) must be positive")

    def active(self, t: float) -> bool:
        return self.kind is not AttackKind.NONE and self.start_time <= t < self.end_time


def apply_sensor_attack(
    measurements,
    attack: SensorAttack,
    t: float,
    history: Sequence | np.ndarray | None = None,
    dt: float = 0.02,
) -> np.ndarray:
    """Corrupt a measurement vector ``[w1, w2, Ptie]`` (batch axes allowed).

    ``history`` holds the uncorrupted measurements of earlier steps, oldest
    first, sampled every ``dt``; a replay attack substitutes the entry
    ``magnitude`` seconds back. Noise attacks add zero-mean normal noise of
    variance ``magnitude``, drawn from the attack's own seed.
    """
    y = np.array(measurements, dtype=float, copy=True)
    if not attack.active(t):
        return y
    ch = _TARGET_CHANNELS[attack.target]
    if attack.kind is AttackKind.BIAS:
        y[..., ch] += attack.magnitude
    elif attack.kind is AttackKind.SCALE:
        y[..., ch] *= attack.magnitude
    elif attack.kind is AttackKind.REPLAY:
        lag = int(round(attack.magnitude / dt))
        n_hist = 0 if history is None else len(history)
        if n_hist < lag:
            raise ValueError(
                f"replay of {attack.magnitude} s needs {lag} samples of history, have {n_hist}"
            )
        y[..., ch] = np.asarray(history[n_hist - lag])[..., ch]
    elif attack.kind is AttackKind.NOISE:
        k = int(round(t / dt))
        key = crng.derive_key(attack.seed, "attack-noise")
        counters = np.uint64(k * N_MEAS) + np.asarray(ch, dtype=np.uint64)
        y[..., ch] += math.sqrt(attack.magnitude) * crng.normal(key, counters)
    return y


# ---------------------------------------------------------------- detector


@dataclass(frozen=True)
class NoiseSpec:
    """Stochastic inputs of the closed loop (standard deviations per step)."""

    load_std: float = 1e-3
    freq_sensor_std: float = 1e-4
    tie_sensor_std: float = 1e-3

    def sensor_std(self) -> np.ndarray:
        return np.array([self.freq_sensor_std, self.freq_sensor_std, self.tie_sensor_std])


@dataclass(frozen=True)
class NominalModel:
    """Discrete plant ``x+ = A x + Bu u + Bw w``, ``y = C x + v`` built from the Euler map."""

    A: np.ndarray
    Bu: np.ndarray
    Bw: np.ndarray
    C: np.ndarray
    noise: NoiseSpec

    @classmethod
    def from_system(cls, sys: AgcSystem, noise: NoiseSpec = NoiseSpec()) -> NominalModel:
        p, dt = sys.params(), sys.dt
        eye = np.eye(N_STATE)
        zero2 = np.zeros(2)
        A = np.stack([_euler(eye[i], zero2, zero2, p, dt) for i in range(N_STATE)], axis=1)
        Bu = np.stack([_euler(np.zeros(N_STATE), np.eye(2)[i], zero2, p, dt) for i in range(2)], axis=1)
        Bw = np.stack([_euler(np.zeros(N_STATE), zero2, np.eye(2)[i], p, dt) for i in range(2)], axis=1)
        C = np.zeros((N_MEAS, N_STATE))
        C[0, 0] = C[1, 1] = C[2, 6] = 1.0
        return cls(A=A, Bu=Bu, Bw=Bw, C=C, noise=noise)

    def nominal_residual_variance(self) -> np.ndarray:
        """Stationary variance of each measurement's watermark-free innovation."""
        Q = self.noise.load_std**2 * self.Bw @ self.Bw.T
        P = _dlyap(self.A, Q)
        return np.diag(self.C @ P @ self.C.T) + self.noise.sensor_std() ** 2


def _dlyap(A, Q, tol=1e-15, max_iter=200):
    """Solve ``P = A P A' + Q`` by the doubling iteration."""
    P, Ak = Q.copy(), A.copy()
    for _ in range(max_iter):
        step = Ak @ P @ Ak.T
        P = P + step
        Ak = Ak @ Ak
        if np.max(np.abs(step)) <= tol * max(1.0, np.max(np.abs(P))):
            return P
    raise RuntimeError("plant is not asymptotically stable; Lyapunov iteration diverged")


@dataclass(frozen=True)
class Thresholds:
    corr_low: float
    var_high: float
    meta: dict = field(default_factory=dict, compare=False)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> Thresholds:
        d = json.loads(text)
        return cls(corr_low=d["corr_low"], var_high=d["var_high"], meta=d.get("meta", {}))


def default_thresholds() -> Thresholds:
    """Thresholds frozen by :func:`calibrate_thresholds` with default settings."""
    text = resources.files("gridloop.data").joinpath("watermark_thresholds.json").read_text()
    return Thresholds.from_json(text)


@dataclass(frozen=True)
class DetectionStatistic:
    window: int
    correlation_stat: float
    variance_stat: float
    threshold_corr: float
    threshold_var: float
    alarm: bool


class InnovationFilter:
    """Running nominal-model predictor for one or a batch of loops.

    ``x_hat`` follows the plant driven by the watermark-free command and
    ``g`` follows the plant driven by the watermark alone. Innovations are
    ``y - C x_hat`` and the expected watermark signature is ``C g``.
    """

    def __init__(self, model: NominalModel, batch_shape=()):
        self.model = model
        self.x_hat = np.zeros(batch_shape + (N_STATE,))
        self.g = np.zeros(batch_shape + (N_STATE,))

    def update(self, y, command, watermark):
        """Consume ``y_k``, the applied setpoint ``u_k`` and ``e_k``; return ``(nu_k, g_k)``."""
        m = self.model
        nu = np.asarray(y) - self.x_hat @ m.C.T
        sig = self.g @ m.C.T
        e = np.asarray(watermark)
        u_clean = np.asarray(command) - e
        self.x_hat = self.x_hat @ m.A.T + u_clean @ m.Bu.T
        self.g = self.g @ m.A.T + e @ m.Bu.T
        return nu, sig


def window_statistics(nu, sig, weights):
    """Correlation and variance statistics over the given samples (axis -2)."""
    w = np.asarray(weights)
    num = np.sum(nu * sig * w, axis=(-2, -1))
    den = np.sum(sig * sig * w, axis=(-2, -1))
    corr = num / den
    resid = nu - sig
    n = nu.shape[-2] * nu.shape[-1]
    var = np.sum(resid * resid * w, axis=(-2, -1)) / n
    return corr, var


def watermark_detect(
    watermark,
    measurements,
    commands,
    window: int,
    model: NominalModel,
    thresholds: Thresholds | None = None,
    watermark_variance: float | None = None,
) -> DetectionStatistic | list[DetectionStatistic]:
    """Run both watermark tests on the last ``window`` samples of the histories.

    ``watermark`` and ``commands`` have shape ``(..., n, 2)``; measurements
    ``(..., n, 3)``. The correlation statistic is the normalized sample
    covariance between innovations and the model-propagated watermark (near
    one when the signature is present, near zero when it is missing); it
    alarms when it drops below ``thresholds.corr_low``. The variance
    statistic is the innovation variance with the watermark removed, relative
    to its nominal value; it alarms above ``thresholds.var_high``.
    """
    if window < MIN_WINDOW:
        raise ValueError(f"window must be at least {MIN_WINDOW} samples")
    e = np.asarray(watermark, dtype=float)
    if watermark_variance is not None and not watermark_variance > 0:
        raise ValueError("watermark variance must be positive for detection")
    if not np.any(e):
        raise ValueError("watermark is identically zero; detection undefined")
    y = np.asarray(measurements, dtype=float)
    u = np.asarray(commands, dtype=float)
    n = y.shape[-2]
    if n < window:
        raise ValueError(f"history of {n} samples is shorter than the window {window}")
    thresholds = default_thresholds() if thresholds is None else thresholds
    filt = InnovationFilter(model, y.shape[:-2])
    nus, sigs = np.empty_like(y), np.empty_like(y)
    for k in range(n):
        nus[..., k, :], sigs[..., k, :] = filt.update(y[..., k, :], u[..., k, :], e[..., k, :])
    weights = 1.0 / model.nominal_residual_variance()
    corr, var = window_statistics(nus[..., n - window :, :], sigs[..., n - window :, :], weights)
    return _as_statistics(corr, var, window, thresholds)


def _as_statistics(corr, var, window, th):
    def one(c, v):
        c, v = float(c), float(v)
        return DetectionStatistic(window, c, v, th.corr_low, th.var_high, c < th.corr_low or v > th.var_high)

    if np.ndim(corr) == 0:
        return one(corr, var)
    return [one(c, v) for c, v in zip(np.ravel(corr), np.ravel(var))]


# ------------------------------------------------------------ closed loop


@dataclass(frozen=True)
class LoadStep:
    time: float
    area: int
    magnitude: float


@dataclass(frozen=True)
class MonitorConfig:
    window: int = 1000
    stride: int = 250


class AgcSimulator:
    """Measured, attacked, watermarked closed loop over a batch of seeds.

    One call to :meth:`step` is one AGC period: sense, attack, control,
    integrate. The detector runs online and is evaluated every
    ``monitor.stride`` steps once a full window is available.
    """

    DRAW_BLOCK = 500

    def __init__(
        self,
        system: AgcSystem = AgcSystem(),
        seeds: Sequence[int] = (0,),
        *,
        watermark_variance: float | None = 1e-4,
        noise: NoiseSpec = NoiseSpec(),
        attacks: Sequence[SensorAttack] = (),
        load_steps: Sequence[LoadStep] = (),
        monitor: MonitorConfig | None = MonitorConfig(),
        thresholds: Thresholds | None = None,
        record: bool = False,
    ):
        self.system = system
        self.p = system.params()
        self.dt = system.dt
        self.seeds = list(seeds)
        n = len(self.seeds)
        self.x = np.tile(system.state_vector(), (n, 1))
        self.sace = np.tile(np.asarray(system.sace, dtype=float), (n, 1))
        self.integral = np.tile(np.asarray(system.integral, dtype=float), (n, 1))
        self.pset = np.tile(np.asarray(system.setpoint, dtype=float), (n, 1))
        self.noise = noise
        self.attacks = list(attacks)
        self.load_steps = list(load_steps)
        self.keys = {
            name: np.array([crng.derive_key(s, "agc", name) for s in self.seeds], dtype=np.uint64)[:, None]
            for name in ("load", "sensor")
        }
        self.wm = (
            [WatermarkKey(crng.derive_key(s, "agc", "watermark-seed"), watermark_variance) for s in self.seeds]
            if watermark_variance
            else None
        )
        self.wm_keys = (
            np.array([w.key for w in self.wm], dtype=np.uint64)[:, None] if self.wm else None
        )
        self.k = 0
        self._blocks: dict[str, tuple[int, np.ndarray]] = {}
        lags = [int(round(a.magnitude / self.dt)) for a in self.attacks if AttackKind(a.kind) is AttackKind.REPLAY]
        self.history: deque[np.ndarray] = deque(maxlen=max(lags, default=0))
        self.monitor = monitor
        self.model = NominalModel.from_system(system, noise)
        self.weights = None
        if monitor is not None and self.wm is not None:
            self.weights = 1.0 / self.model.nominal_residual_variance()
        self.filter = InnovationFilter(self.model, (n,))
        self.thresholds = thresholds
        self._nu: list[np.ndarray] = []
        self._sig: list[np.ndarray] = []
        self.evaluations: list[tuple[float, np.ndarray, np.ndarray]] = []
        self.record = record
        self.trace: dict[str, list[np.ndarray]] = {}

    @property
    def time(self) -> float:
        return self.k * self.dt

    def _draw(self, name, keys, width):
        """Normals for step ``k`` of stream ``name``, counters ``width * k + j``.

        Draws are generated a block of steps at a time; being counter based
        they are identical to per-step generation.
        """
        start, block = self._blocks.get(name, (-1, None))
        if block is None or not start <= self.k < start + self.DRAW_BLOCK:
            start = self.k
            ks = np.arange(start, start + self.DRAW_BLOCK, dtype=np.uint64)
            counters = (ks[:, None] * np.uint64(width) + np.arange(width, dtype=np.uint64)).ravel()
            block = crng.normal(keys, counters).reshape(keys.shape[0], self.DRAW_BLOCK, width)
            self._blocks[name] = (start, block)
        return block[:, self.k - start]

    def _load(self, t):
        base = np.zeros(2)
        for ls in self.load_steps:
            if t >= ls.time - 1e-12:
                base[ls.area] += ls.magnitude
        return base + self.noise.load_std * self._draw("load", self.keys["load"], 2)

    def step(self) -> dict[str, np.ndarray]:
        t = self.time
        p = self.p
        y_true = self.x[:, [0, 1, 6]] + self.noise.sensor_std() * self._draw("sensor", self.keys["sensor"], N_MEAS)
        y = y_true
        for att in self.attacks:
            y = apply_sensor_attack(y, att, t, self.history, self.dt)
        self.history.append(y_true)

        ace = area_control_error(y[:, 0:2], y[:, 2], p.B)
        if self.system.agc_enabled:
            self.sace, self.integral, u = _control(ace, self.sace, self.integral, p, self.dt)
            if self.wm_keys is not None:
                e = math.sqrt(self.wm[0].variance) * self._draw("watermark", self.wm_keys, 2)
            else:
                e = np.zeros_like(u)
            self.pset = u + e
        else:
            e = np.zeros_like(self.pset)
        load = self._load(t)
        out = {
            "t": t,
            "y": y,
            "ace": ace,
            "sace": self.sace.copy(),
            "pset": self.pset.copy(),
            "e": e,
            "x": self.x.copy(),
        }
        nu, sig = self.filter.update(y, self.pset, e)
        self._nu.append(nu)
        self._sig.append(sig)
        self.x = _euler(self.x, self.pset, load, p, self.dt)
        self.k += 1
        if self.monitor is not None and self.wm_keys is not None:
            W = self.monitor.window
            if self.k >= W and (self.k - W) % self.monitor.stride == 0:
                nus = np.stack(self._nu[-W:], axis=1)
                sigs = np.stack(self._sig[-W:], axis=1)
                corr, var = window_statistics(nus, sigs, self.weights)
                self.evaluations.append((self.time, corr, var))
                out["corr"], out["var"] = corr, var
                if self.thresholds is not None:
                    out["alarm"] = (corr < self.thresholds.corr_low) | (var > self.thresholds.var_high)
            if len(self._nu) > 2 * W:
                del self._nu[:-W]
                del self._sig[:-W]
        if self.record:
            for name, val in out.items():
                self.trace.setdefault(name, []).append(np.asarray(val))
        return out

    def run(self, horizon_s: float) -> AgcSimulator:
        for _ in range(int(round(horizon_s / self.dt))):
            self.step()
        return self

    def evaluation_arrays(self):
        """``(times, corr, var)`` with corr/var shaped ``(runs, evaluations)``."""
        if not self.evaluations:
            return np.zeros(0), np.zeros((len(self.seeds), 0)), np.zeros((len(self.seeds), 0))
        times = np.array([e[0] for e in self.evaluations])
        corr = np.stack([e[1] for e in self.evaluations], axis=1)
        var = np.stack([e[2] for e in self.evaluations], axis=1)
        return times, corr, var


CALIBRATION_SEED_BASE = 100_000
CALIBRATION_RUNS = 400
CALIBRATION_HORIZON_S = 60.0
CALIBRATION_TAIL = 0.01


def calibrate_thresholds(
    system: AgcSystem = AgcSystem(),
    *,
    n_runs: int = CALIBRATION_RUNS,
    seed_base: int = CALIBRATION_SEED_BASE,
    horizon_s: float = CALIBRATION_HORIZON_S,
    tail: float = CALIBRATION_TAIL,
    watermark_variance: float = 1e-4,
    noise: NoiseSpec = NoiseSpec(),
    monitor: MonitorConfig = MonitorConfig(),
) -> Thresholds:
    """Monte-Carlo threshold calibration on attack-free runs.

    Each run is monitored over ``horizon_s``; its extreme statistics (lowest
    correlation, highest variance ratio) are collected and each threshold is
    set at the empirical ``tail`` quantile of those extremes. The per-run
    false-alarm probability is therefore about ``2 * tail`` by construction.
    """
    sim = AgcSimulator(
        system,
        range(seed_base, seed_base + n_runs),
        watermark_variance=watermark_variance,
        noise=noise,
        monitor=monitor,
    ).run(horizon_s)
    _, corr, var = sim.evaluation_arrays()
    corr_low = float(np.quantile(corr.min(axis=1), tail))
    var_high = float(np.quantile(var.max(axis=1), 1.0 - tail))
    return Thresholds(
        corr_low=corr_low,
        var_high=var_high,
        meta={
            "n_runs": n_runs,
            "seed_base": seed_base,
            "horizon_s": horizon_s,
            "tail": tail,
            "watermark_variance": watermark_variance,
            "window": monitor.window,
            "stride": monitor.stride,
            "noise": asdict(noise),
        },
    )


def alarm_rate(
    seeds: Sequence[int],
    horizon_s: float,
    *,
    system: AgcSystem = AgcSystem(),
    attacks: Sequence[SensorAttack] = (),
    load_steps: Sequence[LoadStep] = (),
    thresholds: Thresholds | None = None,
    watermark_variance: float = 1e-4,
    noise: NoiseSpec = NoiseSpec(),
    monitor: MonitorConfig = MonitorConfig(),
    after: float = 0.0,
) -> float:
    """Fraction of runs raising at least one alarm at an evaluation time > ``after``."""
    th = default_thresholds() if thresholds is None else thresholds
    sim = AgcSimulator(
        system,
        seeds,
        watermark_variance=watermark_variance,
        noise=noise,
        attacks=attacks,
        load_steps=load_steps,
        monitor=monitor,
    ).run(horizon_s)
    times, corr, var = sim.evaluation_arrays()
    sel = times > after + 1e-9
    alarms = (corr[:, sel] < th.corr_low) | (var[:, sel] > th.var_high)
    return float(np.mean(alarms.any(axis=1)))
