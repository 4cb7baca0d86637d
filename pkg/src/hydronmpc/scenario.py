"""Plain-text scenario and controller-config files.

Both formats are `key = value` lines with `#` comments.  Vector values are
whitespace-separated.  Scenarios describe a closed-loop run (reference
shape, load schedule, controller choice); controller configs carry the NMPC
weights, constraints, and loop sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import DT, N_JOINT
from .errors import ConfigError
from .nmpc import ConstraintSpec, CostWeights, NmpcConfig

REF_KINDS = ("sine", "step", "hold")
CONTROLLERS = ("nmpc", "pid")
GEAR_NAMES = ("low", "medium", "high")


def parse_kv_file(path) -> dict:
    """Read `key = value` lines; later keys override earlier ones."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such file: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"{path}:{lineno}: empty key or value")
        out[key] = value
    return out


def _as_float(kv: dict, key: str, default=None) -> float:
    if key not in kv:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return float(kv[key])
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: {kv[key]!r} is not a number") from exc


def _as_int(kv: dict, key: str, default=None) -> int:
    value = _as_float(kv, key, default)
    if value != int(value):
        raise ConfigError(f"key {key!r} must be an integer")
    return int(value)


def _as_vector(kv: dict, key: str, default=None, size: int = N_JOINT):
    if key not in kv:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return np.asarray(default, dtype=np.float64)
    parts = kv[key].split()
    try:
        vec = np.array([float(p) for p in parts])
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: not a numeric vector") from exc
    if vec.shape != (size,):
        raise ConfigError(f"key {key!r} must have {size} entries")
    return vec


def _as_choice(kv: dict, key: str, choices, default=None) -> str:
    value = kv.get(key, default)
    if value is None:
        raise ConfigError(f"missing required key {key!r}")
    if value not in choices:
        raise ConfigError(f"key {key!r} must be one of {choices}, got {value!r}")
    return value


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    """One closed-loop run: reference shape, load schedule, controller."""

    name: str = "scenario"
    duration: float = 20.0
    dt: float = DT
    seed: int = 0
    controller: str = "nmpc"
    gear: str = "high"            # PID's fixed gear / NMPC's starting gear
    load_mass: float = 0.0
    load_time: float = 0.0        # load attaches once t >= load_time
    start: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINT))
    ref_kind: str = "sine"
    ref_center: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINT))
    ref_amp: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINT))
    ref_freq: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINT))
    ref_phase: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINT))
    step_time: float = 0.0        # step reference switch time

    def __post_init__(self):
        if self.duration <= 0 or self.dt <= 0:
            raise ConfigError("duration and dt must be positive")
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {CONTROLLERS}")
        if self.ref_kind not in REF_KINDS:
            raise ConfigError(f"ref_kind must be one of {REF_KINDS}")
        if self.gear not in GEAR_NAMES:
            raise ConfigError(f"gear must be one of {GEAR_NAMES}")

    @property
    def n_cycles(self) -> int:
        return int(round(self.duration / self.dt))

    def load_at(self, t: float) -> float:
        return self.load_mass if t >= self.load_time else 0.0


def load_scenario(path) -> Scenario:
    kv = parse_kv_file(path)
    return Scenario(
        name=kv.get("name", Path(path).stem),
        duration=_as_float(kv, "duration", 20.0),
        dt=_as_float(kv, "dt", DT),
        seed=_as_int(kv, "seed", 0),
        controller=_as_choice(kv, "controller", CONTROLLERS, "nmpc"),
        gear=_as_choice(kv, "gear", GEAR_NAMES, "high"),
        load_mass=_as_float(kv, "load_mass", 0.0),
        load_time=_as_float(kv, "load_time", 0.0),
        start=_as_vector(kv, "start", np.zeros(N_JOINT)),
        ref_kind=_as_choice(kv, "ref_kind", REF_KINDS, "sine"),
        ref_center=_as_vector(kv, "ref_center", np.zeros(N_JOINT)),
        ref_amp=_as_vector(kv, "ref_amp", np.zeros(N_JOINT)),
        ref_freq=_as_vector(kv, "ref_freq", np.zeros(N_JOINT)),
        ref_phase=_as_vector(kv, "ref_phase", np.zeros(N_JOINT)),
        step_time=_as_float(kv, "step_time", 0.0),
    )


def reference_fn(scn: Scenario):
    """Joint-space reference positions as a function of time (seconds)."""
    if scn.ref_kind == "sine":
        def ref(t):
            return scn.ref_center + scn.ref_amp * np.sin(
                2.0 * np.pi * scn.ref_freq * t + scn.ref_phase)
    elif scn.ref_kind == "step":
        def ref(t):
            offset = scn.ref_amp if t >= scn.step_time else 0.0
            return scn.ref_center + offset
    else:  # hold
        def ref(t):
            return scn.ref_center.copy()
    return ref


def reference_samples(scn: Scenario, t: float, n_horizon: int) -> np.ndarray:
    """(N+1, 3) reference positions at t, t+dt, ..., t+N*dt."""
    ref = reference_fn(scn)
    return np.array([ref(t + i * scn.dt) for i in range(n_horizon + 1)])


# ---------------------------------------------------------------------------
# controller configs
# ---------------------------------------------------------------------------

@dataclass
class ControllerSetup:
    """Everything run_experiment needs besides the trained models."""

    weights: CostWeights
    constraints: ConstraintSpec
    config: NmpcConfig
    history: int

    @classmethod
    def default(cls, n_horizon: int = 10, history: int = 20):
        return cls(weights=CostWeights(), constraints=ConstraintSpec(),
                   config=NmpcConfig(n_horizon=n_horizon), history=history)


def load_controller_config(path) -> ControllerSetup:
    kv = parse_kv_file(path)
    weights = CostWeights(a=_as_float(kv, "a", 1.0),
                          b=_as_float(kv, "b", 0.1),
                          c=_as_float(kv, "c", 1e-6))
    gears = _as_vector(kv, "gears", (80.0, 120.0, 160.0), size=3)
    constraints = ConstraintSpec(
        u_min=tuple(_as_vector(kv, "u_min", (-1.0, -1.0, -1.0))),
        u_max=tuple(_as_vector(kv, "u_max", (1.0, 1.0, 1.0))),
        gears=tuple(gears),
        t_switch=_as_float(kv, "t_switch", 1.0),
        error_threshold=_as_float(kv, "e", 0.05),
    )
    config = NmpcConfig(n_horizon=_as_int(kv, "horizon", 10),
                        k1=_as_int(kv, "k1", 30),
                        eta_u=_as_float(kv, "eta_u", 0.5),
                        k2=_as_int(kv, "k2", 30))
    history = _as_int(kv, "history", 20)
    if history < 1:
        raise ConfigError("history must be positive")
    return ControllerSetup(weights=weights, constraints=constraints,
                           config=config, history=history)
