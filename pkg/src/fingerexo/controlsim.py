"""Simulated linear actuator and its controllers.

The plant is a stroke-limited linear actuator whose speed is zero inside a
PWM dead zone and grows linearly above it up to the rated maximum speed.
On top of it sit a PI position loop with dead-zone compensation, a duty
limiter that protects a stalled motor (the "temperature filter"), a force
loop for back-driving and force rendering, and an offline pipeline turning
recorded EMG channels into stroke references.

Force sign convention: ``F_m`` is the force the user applies to the
actuator rod as read by the load cell, positive towards extension.  A
desired force passed to :class:`ForceController` is a desired value of the
same reading.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import signal

from .errors import ParseError, PreconditionError

PWM_DEAD_ZONE = 37.2
MAX_SPEED = 32.0
STROKE = 50.0
THRESHOLD_PWM = 40.0


@dataclass
class ActuatorPlant:
    position: float = 0.0
    stroke: float = STROKE
    max_speed: float = MAX_SPEED
    dead_zone: float = PWM_DEAD_ZONE
    dt: float = 1e-3

    def velocity(self, pwm: float) -> float:
        pwm = float(np.clip(pwm, -100.0, 100.0))
        if abs(pwm) <= self.dead_zone:
            return 0.0
        return math.copysign(self.max_speed * (abs(pwm) - self.dead_zone) / (100.0 - self.dead_zone), pwm)


def plant_step(plant: ActuatorPlant, pwm: float, dt: Optional[float] = None) -> float:
    """Advance the plant by one step and return its new position (mm)."""
    dt = plant.dt if dt is None else dt
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    plant.position = float(np.clip(plant.position + plant.velocity(pwm) * dt, 0.0, plant.stroke))
    return plant.position


@dataclass
class ControllerGains:
    K_P: float = 10.0
    K_I: float = 5.0
    integral_clamp: float = 100.0   # bound on |K_I * integral| in PWM percent
    K_w: float = 0.5

    def __post_init__(self):
        if self.K_P < 0 or self.K_I < 0:
            raise PreconditionError("gains must be non-negative")


@dataclass
class ControlTick:
    t: float
    ref: float
    meas: float
    e: float
    F_thr: float
    F_cont: float
    F_PWM_raw: float
    F_PWM: float
    limit: float
    pos: float


class PositionController:
    """PI position loop with a fixed dead-zone compensation term.

    ``F_PWM = sign(e)*40 + K_P*e + K_I*integral(e)``.  Inside the deadband
    ``|e| < deadband`` the threshold term is dropped so the motor does not
    chatter around the target.  The integral is clamped so that
    ``|K_I*integral| <= integral_clamp``.
    """

    def __init__(self, gains: ControllerGains = ControllerGains(), deadband: float = 0.2,
                 threshold: float = THRESHOLD_PWM):
        self.gains = gains
        self.deadband = deadband
        self.threshold = threshold
        self.integral = 0.0

    def tick(self, ref: float, meas: float, dt: float = 1e-3) -> tuple:
        """Return ``(F_thr, F_cont, F_PWM)``."""
        g = self.gains
        e = ref - meas
        self.integral += e * dt
        if g.K_I > 0:
            lim = g.integral_clamp / g.K_I
            self.integral = float(np.clip(self.integral, -lim, lim))
        F_thr = 0.0 if abs(e) < self.deadband else math.copysign(self.threshold, e)
        F_cont = g.K_P * e + g.K_I * self.integral
        return F_thr, F_cont, float(np.clip(F_thr + F_cont, -100.0, 100.0))


def position_controller_tick(controller: PositionController, ref: float, meas: float,
                             dt: float = 1e-3) -> float:
    return controller.tick(ref, meas, dt)[2]


@dataclass
class TemperatureFilterState:
    pwm_min: float = 60.0
    pwm_max: float = 90.0
    limit: float = 90.0
    decay_rate: float = 30.0      # percent per second while saturated
    recovery_rate: float = 15.0   # percent per second while demand is low


def temperature_filter_tick(state: TemperatureFilterState, pwm_in: float, dt: float = 1e-3) -> float:
    """Limit the PWM magnitude; the limit shrinks while the demand saturates it.

    Demand below ``pwm_min`` passes through and lets the limit recover
    towards ``pwm_max``.  Demand at or above the current limit is clamped
    and the limit decays towards ``pwm_min``.
    """
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    mag = abs(pwm_in)
    if mag < state.pwm_min:
        state.limit = min(state.pwm_max, state.limit + state.recovery_rate * dt)
        return float(pwm_in)
    if mag >= state.limit:
        state.limit = max(state.pwm_min, state.limit - state.decay_rate * dt)
    state.limit = float(np.clip(state.limit, state.pwm_min, state.pwm_max))
    return float(math.copysign(min(mag, state.limit), pwm_in))


class ForceController:
    """Force loop used for back-driving and for force rendering.

    With the error ``F_e = F_a - F_m`` (``F_a`` desired reading, ``F_m``
    measured reading) the command is

        F_PWM = -K_w*F_a - K_P*F_e - K_I*integral(F_e) + dead-zone term

    With ``F_a = 0`` this reduces to ``K_P*F_m + K_I*integral(F_m)``: the
    actuator moves the way it is pushed.  The dead-zone term adds
    ``+-threshold`` in the direction of the remaining command once the
    force error exceeds ``deadband``.
    """

    def __init__(self, gains: ControllerGains = ControllerGains(K_P=8.0, K_I=20.0), deadband: float = 0.05,
                 threshold: float = THRESHOLD_PWM):
        self.gains = gains
        self.deadband = deadband
        self.threshold = threshold
        self.integral = 0.0

    def tick(self, F_desired: float, F_measured: float, dt: float = 1e-3) -> float:
        g = self.gains
        F_e = F_desired - F_measured
        self.integral += F_e * dt
        if g.K_I > 0:
            lim = g.integral_clamp / g.K_I
            self.integral = float(np.clip(self.integral, -lim, lim))
        feed = -g.K_w * F_desired if F_desired != 0 else 0.0
        cmd = feed - g.K_P * F_e - g.K_I * self.integral
        thr = 0.0
        if abs(F_e) >= self.deadband and cmd != 0:
            thr = math.copysign(self.threshold, cmd)
        return float(np.clip(cmd + thr, -100.0, 100.0))


def force_controller_tick(controller: ForceController, F_desired: float, F_measured: float,
                          dt: float = 1e-3) -> float:
    return controller.tick(F_desired, F_measured, dt)


# ------------------------------------------------------------ scenario runs

@dataclass
class Scenario:
    kind: str = "step"              # step | ramp | samples | emg
    duration: float = 5.0
    dt: float = 1e-3
    start: float = 0.0              # initial plant position
    amplitude: float = 25.0         # step target (mm)
    step_time: float = 0.0
    rate: float = 10.0              # ramp slope (mm/s)
    ramp_end: float = 45.0
    times: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    gains: ControllerGains = field(default_factory=ControllerGains)
    filter_on: bool = True

    def reference(self, t: float) -> float:
        if self.kind == "step":
            return self.amplitude if t >= self.step_time else self.start
        if self.kind == "ramp":
            return min(self.start + self.rate * t, self.ramp_end)
        if self.kind in ("samples", "emg"):
            return float(np.interp(t, self.times, self.values))
        raise PreconditionError(f"unknown reference kind {self.kind!r}")


def simulate_position(scenario: Scenario) -> list:
    """Closed-loop position tracking; one :class:`ControlTick` per step."""
    plant = ActuatorPlant(position=scenario.start, dt=scenario.dt)
    ctrl = PositionController(scenario.gains)
    filt = TemperatureFilterState()
    ticks = []
    n = int(round(scenario.duration / scenario.dt))
    for k in range(n + 1):
        t = k * scenario.dt
        ref = scenario.reference(t)
        meas = plant.position
        F_thr, F_cont, raw = ctrl.tick(ref, meas, scenario.dt)
        out = temperature_filter_tick(filt, raw, scenario.dt) if scenario.filter_on else raw
        ticks.append(ControlTick(t, ref, meas, ref - meas, F_thr, F_cont, raw, out,
                                 filt.limit if scenario.filter_on else 100.0, plant.position))
        plant_step(plant, out, scenario.dt)
        ticks[-1].pos = plant.position
    return ticks


def settling_time(ticks: Sequence[ControlTick], band: float) -> float:
    """First time after which |ref - pos| stays within ``band``."""
    err = np.array([abs(tk.ref - tk.pos) for tk in ticks])
    t = np.array([tk.t for tk in ticks])
    outside = np.flatnonzero(err > band)
    if len(outside) == 0:
        return float(t[0])
    if outside[-1] == len(t) - 1:
        return math.inf
    return float(t[outside[-1] + 1])


def simulate_force(F_desired, user_force, duration: float = 2.0, dt: float = 1e-3, start: float = 25.0,
                   controller: Optional[ForceController] = None) -> dict:
    """Force-loop run against a user model.

    ``F_desired(t, pos)`` gives the desired reading; ``user_force(t, pos)``
    the load-cell reading produced by the user at that rod position.
    """
    plant = ActuatorPlant(position=start, dt=dt)
    ctrl = controller or ForceController()
    n = int(round(duration / dt))
    log = {k: np.empty(n) for k in ("t", "pos", "F_d", "F_m", "F_e", "F_PWM")}
    for k in range(n):
        t = k * dt
        F_m = user_force(t, plant.position)
        F_d = F_desired(t, plant.position)
        pwm = ctrl.tick(F_d, F_m, dt)
        for key, val in zip(log, (t, plant.position, F_d, F_m, F_d - F_m, pwm)):
            log[key][k] = val
        plant_step(plant, pwm, dt)
    return log


# -------------------------------------------------------------------- EMG

def read_emg_csv(source) -> tuple:
    """Parse ``t,ch1..ch8``; returns ``(t, channels)`` with channels (n, 8)."""
    if isinstance(source, (str, Path)) and Path(source).is_file():
        text = Path(source).read_text()
    else:
        text = str(source)
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise ParseError("empty EMG file", row=0)
    header = [h.strip() for h in rows[0]]
    expected = ["t"] + [f"ch{i}" for i in range(1, 9)]
    if header != expected:
        raise ParseError(f"header must be {','.join(expected)}", row=1)
    data = []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != 9:
            raise ParseError(f"row {i}: expected 9 fields, got {len(r)}", row=i)
        try:
            data.append([float(x) for x in r])
        except ValueError:
            raise ParseError(f"row {i}: non-numeric value", row=i) from None
    arr = np.array(data, dtype=float).reshape(-1, 9)
    return arr[:, 0], arr[:, 1:]


def emg_reference_pipeline(t: np.ndarray, channels: np.ndarray, weights: np.ndarray,
                           cutoff: float = 10.0, stroke: float = STROKE, order: int = 2) -> np.ndarray:
    """Stroke references (mm) for index, middle, ring and little fingers.

    Channels are rectified, low-pass filtered, mixed by ``weights`` (8 x n,
    one column per driven finger: index, middle, ring), scaled so each
    output peaks at 1 over the record, and multiplied by ``stroke``.  When
    three columns are given the little finger copies the ring finger.
    """
    t = np.asarray(t, dtype=float)
    x = np.abs(np.asarray(channels, dtype=float))
    W = np.asarray(weights, dtype=float)
    if x.ndim != 2 or x.shape[1] != 8 or W.shape[0] != 8:
        raise PreconditionError("expected 8 channels and an 8 x n weight matrix")
    if len(t) > 1:
        fs = 1.0 / float(np.median(np.diff(t)))
        if cutoff < fs / 2:
            sos = signal.butter(order, cutoff, btype="low", fs=fs, output="sos")
            x = signal.sosfilt(sos, x, axis=0)
    y = np.clip(x @ W, 0.0, None)
    peak = y.max(axis=0) if len(y) else np.zeros(W.shape[1])
    scale = np.divide(1.0, peak, out=np.zeros_like(peak), where=peak > 0)
    refs = y * scale * stroke
    if refs.shape[1] == 3:
        refs = np.column_stack([refs, refs[:, 2]])
    return refs
