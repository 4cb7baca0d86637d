"""Deterministic surrogate of a positive-flow hydraulic excavator.

Three joints (swing, boom, arm) share one engine-driven pump.  Valve commands
pass a dead zone and a first-order spool lag; the pump supplies flow
proportional to engine speed; when total demand exceeds supply the allocation is
scaled proportionally (flow starvation couples the joints); unconsumed supply
passes the relief valve as pure overflow loss.  Joint motion is second-order:
drive torque proportional to allocated flow works against viscous damping and
a load torque, and a closed valve hydraulically locks the joint.  A carried
load also adds rotational inertia on every joint (mass times lever arm
squared), which is what couples it to the swing axis where its gravity
torque vanishes.

Also here: the dead-zone-compensated PID baseline, the workspace safety
monitor, and the open/closed-loop data-collection procedures.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .constants import DT, N_INPUT, N_STATE
from .dataset import Episode, EpisodeStore
from .errors import ConfigError, SimulationError

GRAVITY = 9.81


@dataclass(frozen=True)
class PlantParams:
    """Canonical surrogate constants (repo-defined; all positive)."""

    inertia: tuple = (5.0, 4.0, 2.0)          # kg m^2 per joint
    damping: tuple = (8.0, 8.0, 5.0)          # N m s/rad
    dead_zone: tuple = (0.10, 0.12, 0.10)     # valve units
    leak_coeff: float = 0.002                 # flow lost while a valve is open
    flow_gain: tuple = (0.05, 0.06, 0.05)     # max flow demand at full valve
    torque_gain: tuple = (60.0, 66.0, 50.0)   # drive torque per unit flow
    load_lever: tuple = (0.0, 0.5, 0.3)       # load torque arm per joint (m)
    load_inertia: tuple = (1.3, 0.25, 0.15)   # added kg m^2 per unit load
    pump_disp: float = 1.0e-3                 # L_pump, flow per engine rad/s
    gears: tuple = (80.0, 120.0, 160.0)       # engine speeds {low, med, high}
    relief_flow: float = 0.2                  # relief valve capacity bound
    spool_tau: float = 0.15                   # valve spool lag (s), hidden
    lock_decay: float = 25.0                  # velocity decay rate when locked
    u_min: float = -1.0
    u_max: float = 1.0

    def __post_init__(self):
        for name in ("inertia", "damping", "flow_gain", "torque_gain"):
            if any(v <= 0 for v in getattr(self, name)):
                raise ConfigError(f"plant params: {name} must be positive")
        if any(dz <= 0 or dz >= self.u_max for dz in self.dead_zone):
            raise ConfigError("dead zone must sit inside the saturation bound")
        if any(v < 0 for v in self.load_inertia):
            raise ConfigError("plant params: load_inertia must be non-negative")
        if self.pump_disp <= 0 or self.spool_tau <= 0:
            raise ConfigError("pump_disp and spool_tau must be positive")

    def gear_speed(self, name: str) -> float:
        idx = {"low": 0, "medium": 1, "high": 2}
        if name not in idx:
            raise ConfigError(f"unknown gear {name!r}")
        return self.gears[idx[name]]


@dataclass
class PlantState:
    """Joint kinematics plus pump/gear bookkeeping and hidden spool state."""

    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    gear_speed: float
    last_switch_time: float = 0.0
    load: float = 0.0
    spool: np.ndarray = None
    t: float = 0.0

    def __post_init__(self):
        if self.spool is None:
            self.spool = np.zeros(3)

    def state_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qd, self.qdd])

    def copy(self) -> "PlantState":
        return PlantState(q=self.q.copy(), qd=self.qd.copy(),
                          qdd=self.qdd.copy(), gear_speed=self.gear_speed,
                          last_switch_time=self.last_switch_time,
                          load=self.load, spool=self.spool.copy(), t=self.t)


@dataclass
class PlantTelemetry:
    """Per-step flow accounting."""

    supply: float
    demand: float
    overflow: float
    alloc: np.ndarray


def initial_state(params: PlantParams, q0=None, gear: str = "medium") -> PlantState:
    q = np.zeros(3) if q0 is None else np.asarray(q0, dtype=np.float64).copy()
    return PlantState(q=q, qd=np.zeros(3), qdd=np.zeros(3),
                      gear_speed=params.gear_speed(gear))


def apply_dead_zone(u: np.ndarray, dead_zone, u_max: float = 1.0) -> np.ndarray:
    """Rescaled dead zone: zero inside the band, then linear up to full travel."""
    dz = np.asarray(dead_zone)
    mag = np.abs(u)
    out = np.where(mag <= dz, 0.0, np.sign(u) * (mag - dz) / (u_max - dz))
    return out


def plant_step(state: PlantState, params: PlantParams, control: np.ndarray,
               load: float = 0.0, dt: float = DT) -> tuple[PlantState, PlantTelemetry]:
    """Advance one control period; returns (new state, telemetry).

    ``control`` is an InputVector [u_swing, u_boom, u_arm, omega_engine].
    """
    control = np.asarray(control, dtype=np.float64)
    if control.shape != (N_INPUT,):
        raise SimulationError(f"control must have {N_INPUT} entries")
    if not np.all(np.isfinite(control)):
        raise SimulationError("non-finite control input")

    u = np.clip(control[:3], params.u_min, params.u_max)
    omega = float(control[3])
    new = state.copy()
    if omega != state.gear_speed:
        new.gear_speed = omega
        new.last_switch_time = state.t
    new.load = load

    # Valve path: dead zone, then first-order spool lag (hidden state).
    v = apply_dead_zone(u, params.dead_zone, params.u_max)
    alpha = dt / params.spool_tau
    new.spool = state.spool + alpha * (v - state.spool)

    # Flow accounting.  Supply follows the engine; demand follows the spools;
    # a starved pump scales every allocation down proportionally.
    supply = min(omega * params.pump_disp, params.relief_flow)
    dem = np.abs(new.spool) * np.asarray(params.flow_gain)
    demand = float(dem.sum())
    if demand > supply and demand > 0.0:
        alloc = dem * (supply / demand)
    else:
        alloc = dem.copy()
    overflow = max(0.0, supply - demand)
    telemetry = PlantTelemetry(supply=supply, demand=demand,
                               overflow=overflow, alloc=alloc)

    # Joint dynamics, semi-implicit Euler.  An open valve drives the joint
    # against damping and the gravity-load torque; a command inside the dead
    # zone locks the joint (counterbalance behavior): velocity decays, no
    # load droop, even while the spool is still draining.
    inertia = np.asarray(params.inertia) + load * np.asarray(params.load_inertia)
    damping = np.asarray(params.damping)
    k_tau = np.asarray(params.torque_gain)
    lever = np.asarray(params.load_lever)
    open_valve = np.abs(v) > 0.0
    eff_flow = np.maximum(alloc - params.leak_coeff, 0.0)
    drive = np.sign(new.spool) * k_tau * eff_flow
    tau_load = load * lever * GRAVITY / 10.0
    qdd = np.where(open_valve,
                   (drive - damping * state.qd - tau_load) / inertia,
                   -params.lock_decay * state.qd)
    qd_new = state.qd + dt * qdd
    q_new = state.q + dt * qd_new
    new.q = q_new
    new.qd = qd_new
    new.qdd = (qd_new - state.qd) / dt  # recorded accel: backward difference
    new.t = state.t + dt
    return new, telemetry


# ---------------------------------------------------------------------------
# Workspace / safety
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Workspace:
    """Joint-angle box plus an end-effector radius bound."""

    q_min: tuple = (-2.0, -0.5, -1.6)
    q_max: tuple = (2.0, 1.2, 0.3)
    boom_len: float = 5.7
    arm_len: float = 2.9
    radius_max: float = 8.4

    def __post_init__(self):
        if any(lo >= hi for lo, hi in zip(self.q_min, self.q_max)):
            raise ConfigError("workspace box must have nonempty interior")


def forward_kinematics(workspace: Workspace, q: np.ndarray) -> tuple[float, float]:
    """Planar boom/arm end-effector position (reach, height)."""
    b, a = q[1], q[1] + q[2]
    x = workspace.boom_len * np.cos(b) + workspace.arm_len * np.cos(a)
    z = workspace.boom_len * np.sin(b) + workspace.arm_len * np.sin(a)
    return float(x), float(z)


@dataclass
class SafetyViolation:
    kind: str    # "joint" or "cartesian"
    index: int   # joint index, or -1 for cartesian
    value: float


def safety_check(state: PlantState, workspace: Workspace):
    """None when inside the workspace, else the first violation found."""
    for i in range(3):
        if not (workspace.q_min[i] <= state.q[i] <= workspace.q_max[i]):
            return SafetyViolation(kind="joint", index=i, value=float(state.q[i]))
    x, z = forward_kinematics(workspace, state.q)
    radius = float(np.hypot(x, z))
    if radius > workspace.radius_max:
        return SafetyViolation(kind="cartesian", index=-1, value=radius)
    return None


# ---------------------------------------------------------------------------
# PID baseline
# ---------------------------------------------------------------------------

@dataclass
class PidController:
    """Per-joint PID with dead-zone compensation and integral anti-windup."""

    kp: np.ndarray
    ki: np.ndarray
    kd: np.ndarray
    dead_zone: np.ndarray
    u_min: float = -1.0
    u_max: float = 1.0
    integral_limit: float = 1.5
    integral: np.ndarray = None
    prev_error: np.ndarray = None

    def __post_init__(self):
        self.kp = np.asarray(self.kp, dtype=np.float64)
        self.ki = np.asarray(self.ki, dtype=np.float64)
        self.kd = np.asarray(self.kd, dtype=np.float64)
        self.dead_zone = np.asarray(self.dead_zone, dtype=np.float64)
        if self.integral is None:
            self.integral = np.zeros(3)

    def reset(self) -> None:
        self.integral = np.zeros(3)
        self.prev_error = None

    @classmethod
    def canonical(cls, params: PlantParams) -> "PidController":
        return cls(kp=[2.5, 3.0, 3.0], ki=[0.4, 0.6, 0.6], kd=[0.3, 0.25, 0.2],
                   dead_zone=params.dead_zone, u_min=params.u_min,
                   u_max=params.u_max)


def pid_step(ctrl: PidController, reference: np.ndarray,
             measurement: np.ndarray, dt: float = DT) -> np.ndarray:
    """One PID update on the three valve channels (gear handled elsewhere)."""
    e = np.asarray(reference, dtype=np.float64) - np.asarray(measurement,
                                                             dtype=np.float64)
    ctrl.integral = np.clip(ctrl.integral + e * dt,
                            -ctrl.integral_limit, ctrl.integral_limit)
    de = np.zeros(3) if ctrl.prev_error is None else (e - ctrl.prev_error) / dt
    ctrl.prev_error = e.copy()
    u = ctrl.kp * e + ctrl.ki * ctrl.integral + ctrl.kd * de
    u = u + np.where(u > 0, ctrl.dead_zone, np.where(u < 0, -ctrl.dead_zone, 0.0))
    return np.clip(u, ctrl.u_min, ctrl.u_max)


# ---------------------------------------------------------------------------
# Data collection
# ---------------------------------------------------------------------------

def _pose_is_safe(workspace: Workspace, q: np.ndarray,
                  margin: float = 0.0) -> bool:
    lo = np.asarray(workspace.q_min)
    hi = np.asarray(workspace.q_max)
    pad = margin * (hi - lo)
    if np.any(q < lo + pad) or np.any(q > hi - pad):
        return False
    x, z = forward_kinematics(workspace, q)
    return float(np.hypot(x, z)) <= workspace.radius_max - margin


def _safe_start(workspace: Workspace, rng: np.random.Generator) -> np.ndarray:
    lo = np.asarray(workspace.q_min)
    hi = np.asarray(workspace.q_max)
    center = 0.5 * (lo + hi)
    scale = 0.15
    while True:
        q = center + rng.uniform(-1.0, 1.0, size=3) * scale * (hi - lo)
        if _pose_is_safe(workspace, q, margin=0.02):
            return q
        scale *= 0.7  # shrink toward the center, which may itself be unsafe
        if scale < 1e-3:
            return center


def _record_episode(params: PlantParams, workspace: Workspace,
                    state: PlantState, input_fn, steps: int,
                    load: float, meta: dict) -> Episode:
    """Run ``input_fn(t_index, state) -> (3,) valves`` storing (state, input).

    Stops early on a safety violation; the violating sample is kept as the
    final row so the truncation is auditable.
    """
    states = np.zeros((steps, N_STATE))
    inputs = np.zeros((steps, N_INPUT))
    count = 0
    for t in range(steps):
        u = input_fn(t, state)
        control = np.concatenate([u, [state.gear_speed]])
        states[count] = state.state_vector()
        inputs[count] = control
        count += 1
        state, _ = plant_step(state, params, control, load=load)
        if safety_check(state, workspace) is not None:
            if count < steps:
                states[count] = state.state_vector()
                inputs[count] = np.concatenate([np.zeros(3), [state.gear_speed]])
                count += 1
            meta = dict(meta, truncated="1")
            break
    return Episode(states=states[:count], inputs=inputs[:count], meta=meta)


def collect_open_loop(params: PlantParams, workspace: Workspace,
                      episodes: int, steps: int, seed: int,
                      amp_range: tuple = (0.2, 0.9),
                      freq_range: tuple = (0.05, 0.6),
                      load: float = 0.0) -> EpisodeStore:
    """Random-amplitude/frequency sine valves and a random gear per episode."""
    rng = np.random.default_rng(seed)
    store = EpisodeStore()
    gear_names = ("low", "medium", "high")
    for k in range(episodes):
        amp = rng.uniform(amp_range[0], amp_range[1], size=3)
        freq = rng.uniform(freq_range[0], freq_range[1], size=3)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
        gear = gear_names[int(rng.integers(0, 3))]
        state = initial_state(params, q0=_safe_start(workspace, rng), gear=gear)

        def sine_input(t, _state, amp=amp, freq=freq, phase=phase):
            return amp * np.sin(2.0 * np.pi * freq * (t * DT) + phase)

        meta = {"mode": "open_loop", "seed": str(seed), "episode": str(k),
                "gear": gear, "load": repr(load)}
        store.add(_record_episode(params, workspace, state, sine_input,
                                  steps, load, meta))
    return store


def collect_closed_loop(params: PlantParams, workspace: Workspace,
                        episodes: int, steps: int, seed: int,
                        amp_range: tuple = (0.1, 0.4),
                        freq_range: tuple = (0.05, 0.3),
                        load: float = 0.0) -> EpisodeStore:
    """PID tracking of random sine references inside the workspace box."""
    rng = np.random.default_rng(seed)
    store = EpisodeStore()
    lo = np.asarray(workspace.q_min)
    hi = np.asarray(workspace.q_max)
    span = hi - lo
    gear_names = ("medium", "high")
    for k in range(episodes):
        # Draw sine references until the whole commanded path sits safely
        # inside the workspace (box and radius), leaving margin for overshoot.
        amp_scale = 1.0
        while True:
            center = 0.5 * (lo + hi) + rng.uniform(-0.1, 0.1, size=3) * span
            amp = rng.uniform(amp_range[0], amp_range[1], size=3) \
                * 0.5 * span * amp_scale
            freq = rng.uniform(freq_range[0], freq_range[1], size=3)
            phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
            probes = np.linspace(0.0, steps * DT, 97)
            if all(_pose_is_safe(workspace,
                                 center + amp * np.sin(2 * np.pi * freq * tp
                                                       + phase),
                                 margin=0.04)
                   for tp in probes):
                break
            amp_scale *= 0.8
        gear = gear_names[int(rng.integers(0, 2))]
        state = initial_state(params, q0=center.copy(), gear=gear)
        pid = PidController.canonical(params)

        def tracking_input(t, st, center=center, amp=amp, freq=freq,
                           phase=phase, pid=pid):
            ref = center + amp * np.sin(2.0 * np.pi * freq * (t * DT) + phase)
            return pid_step(pid, ref, st.q)

        meta = {"mode": "closed_loop", "seed": str(seed), "episode": str(k),
                "gear": gear, "load": repr(load)}
        store.add(_record_episode(params, workspace, state, tracking_input,
                                  steps, load, meta))
    return store
