"""Closed-loop experiment harness: scenario in, CSV artifacts out.

Runs the configured controller (NMPC or the PID baseline) against the
surrogate plant and records a per-cycle trace plus a one-row summary
(per-joint tracking RMSE, steady-state error, final energy efficiency,
gear-switch count).  All CSV content is deterministic for a fixed seed;
wall-clock timings go to a separate sidecar text file so the CSVs stay
byte-stable across machines and runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import DT, N_JOINT
from .dataset import _FLOAT_FMT
from .errors import ConfigError, ContractError
from .metrics import energy_efficiency, rmse
from .nmpc import NmpcController, ReferenceTrajectory
from .plant import (
    PidController,
    PlantParams,
    Workspace,
    initial_state,
    pid_step,
    plant_step,
    safety_check,
)
from .residual import MismatchBuffer, ResidualModel
from .scenario import ControllerSetup, Scenario, reference_fn, reference_samples
from .ssmp import SsmpModel

TRACE_COLUMNS = (
    "t",
    "q_swing", "q_boom", "q_arm",
    "ref_swing", "ref_boom", "ref_arm",
    "u_swing", "u_boom", "u_arm", "omega",
    "supply", "demand", "overflow",
    "j_initial", "j_final", "eta", "warm_up", "fault",
)

SUMMARY_COLUMNS = (
    "scenario", "controller", "cycles",
    "rmse_swing", "rmse_boom", "rmse_arm",
    "steady_swing", "steady_boom", "steady_arm",
    "final_e", "e_undefined", "gear_switches",
    "violations", "warm_cycles", "faults",
)


@dataclass
class RunTrace:
    """Uniformly-sampled closed-loop record."""

    t: np.ndarray
    states: np.ndarray     # (T, 9) sensor states before each step
    refs: np.ndarray       # (T, 3) reference positions
    inputs: np.ndarray     # (T, 4) commands applied
    supply: np.ndarray
    demand: np.ndarray
    overflow: np.ndarray
    j_initial: np.ndarray
    j_final: np.ndarray
    eta: np.ndarray
    warm_up: np.ndarray    # 0/1
    fault: np.ndarray      # 0/1
    cycle_ms: np.ndarray   # wall-clock; excluded from the CSVs

    def __post_init__(self):
        n = self.t.shape[0]
        for name in ("states", "refs", "inputs", "supply", "demand",
                     "overflow", "j_initial", "j_final", "eta", "warm_up",
                     "fault", "cycle_ms"):
            if getattr(self, name).shape[0] != n:
                raise ContractError(f"trace field {name} length mismatch")
        if n > 1:
            steps = np.diff(self.t)
            if not np.allclose(steps, steps[0], rtol=0, atol=1e-12):
                raise ContractError("trace timestamps must be uniform")

    @property
    def n_cycles(self) -> int:
        return self.t.shape[0]

    def table(self) -> np.ndarray:
        """(T, len(TRACE_COLUMNS)) matrix in CSV column order."""
        return np.column_stack([
            self.t, self.states[:, :N_JOINT], self.refs, self.inputs,
            self.supply, self.demand, self.overflow,
            self.j_initial, self.j_final, self.eta,
            self.warm_up, self.fault,
        ])


@dataclass
class ExperimentResult:
    trace: RunTrace
    summary: dict
    trace_path: Path = None
    summary_path: Path = None


def _gear_switch_count(omega: np.ndarray) -> int:
    return int(np.sum(omega[1:] != omega[:-1]))


def summarize(scn: Scenario, trace: RunTrace) -> dict:
    """Summary-row values in SUMMARY_COLUMNS order."""
    q = trace.states[:, :N_JOINT]
    err = q - trace.refs
    tail = max(1, trace.n_cycles // 4)
    energy = energy_efficiency(trace.supply, trace.overflow, scn.dt)
    probe = initial_state(PlantParams())
    workspace = Workspace()
    violations = 0
    for row in trace.states:
        probe.q = row[:N_JOINT]
        if safety_check(probe, workspace) is not None:
            violations += 1
    out = {
        "scenario": scn.name,
        "controller": scn.controller,
        "cycles": trace.n_cycles,
        "final_e": energy.final,
        "e_undefined": int(energy.undefined),
        "gear_switches": _gear_switch_count(trace.inputs[:, 3]),
        "violations": violations,
        "warm_cycles": int(trace.warm_up.sum()),
        "faults": int(trace.fault.sum()),
    }
    for i, joint in enumerate(("swing", "boom", "arm")):
        out[f"rmse_{joint}"] = rmse(q[:, i], trace.refs[:, i])
        out[f"steady_{joint}"] = float(np.mean(np.abs(err[-tail:, i])))
    return out


def write_trace_csv(path, trace: RunTrace) -> None:
    np.savetxt(path, trace.table(), fmt=_FLOAT_FMT, delimiter=",",
               header=",".join(TRACE_COLUMNS), comments="")


def write_summary_csv(path, summary: dict) -> None:
    cells = []
    for col in SUMMARY_COLUMNS:
        value = summary[col]
        if isinstance(value, str):
            cells.append(value)
        elif isinstance(value, (int, np.integer)):
            cells.append(str(int(value)))
        else:
            cells.append(_FLOAT_FMT % value)
    Path(path).write_text(",".join(SUMMARY_COLUMNS) + "\n"
                          + ",".join(cells) + "\n")


def write_timing_sidecar(path, trace: RunTrace) -> None:
    ms = trace.cycle_ms
    Path(path).write_text(
        "cycles %d\nmean_ms %.3f\nmax_ms %.3f\n"
        % (ms.size, float(ms.mean()) if ms.size else 0.0,
           float(ms.max()) if ms.size else 0.0))


def run_experiment(scn: Scenario, setup: ControllerSetup,
                   model: SsmpModel = None, residual: ResidualModel = None,
                   out_dir=None, plant_params: PlantParams = None,
                   workspace: Workspace = None,
                   extraction: str = "mean") -> ExperimentResult:
    """Execute one scenario; returns the trace and writes CSVs if out_dir."""
    params = PlantParams() if plant_params is None else plant_params
    ws = Workspace() if workspace is None else workspace
    if scn.controller == "nmpc":
        if model is None or residual is None:
            raise ConfigError("nmpc scenario needs trained offline and "
                              "online models")
        if model.h != setup.history:
            raise ConfigError(f"model history {model.h} does not match "
                              f"configured history {setup.history}")
        controller = NmpcController(
            model, residual, setup.weights, setup.constraints, setup.config,
            PidController.canonical(params), buffer=MismatchBuffer(),
            initial_gear=params.gear_speed(scn.gear), extraction=extraction)
        n_horizon = setup.config.n_horizon
    else:
        pid = PidController.canonical(params)
        gear_speed = params.gear_speed(scn.gear)

    ref = reference_fn(scn)
    state = initial_state(params, q0=scn.start, gear=scn.gear)
    rows = {name: [] for name in ("t", "state", "refp", "cmd", "supply",
                                  "demand", "overflow", "ji", "jf", "eta",
                                  "warm", "fault", "ms")}
    for k in range(scn.n_cycles):
        t = k * scn.dt
        ref_now = ref(t)
        if scn.controller == "nmpc":
            samples = reference_samples(scn, t, n_horizon)
            traj = ReferenceTrajectory.from_samples(samples, dt=scn.dt)
            cmd, diag = controller.cycle(state.state_vector(), traj, ref_now,
                                         now=t)
            ji, jf, eta = diag.j_initial, diag.j_final, diag.eta
            warm, fault, ms = diag.warm_up, diag.fault, diag.cycle_ms
        else:
            u = pid_step(pid, ref_now, state.q, dt=scn.dt)
            cmd = np.concatenate([u, [gear_speed]])
            ji = jf = eta = np.nan
            warm = fault = False
            ms = 0.0
        rows["t"].append(t)
        rows["state"].append(state.state_vector())
        rows["refp"].append(ref_now)
        rows["cmd"].append(cmd)
        state, tel = plant_step(state, params, cmd, load=scn.load_at(t),
                                dt=scn.dt)
        rows["supply"].append(tel.supply)
        rows["demand"].append(tel.demand)
        rows["overflow"].append(tel.overflow)
        rows["ji"].append(ji)
        rows["jf"].append(jf)
        rows["eta"].append(eta)
        rows["warm"].append(float(warm))
        rows["fault"].append(float(fault))
        rows["ms"].append(ms)

    trace = RunTrace(
        t=np.asarray(rows["t"]),
        states=np.asarray(rows["state"]),
        refs=np.asarray(rows["refp"]),
        inputs=np.asarray(rows["cmd"]),
        supply=np.asarray(rows["supply"]),
        demand=np.asarray(rows["demand"]),
        overflow=np.asarray(rows["overflow"]),
        j_initial=np.asarray(rows["ji"]),
        j_final=np.asarray(rows["jf"]),
        eta=np.asarray(rows["eta"]),
        warm_up=np.asarray(rows["warm"]),
        fault=np.asarray(rows["fault"]),
        cycle_ms=np.asarray(rows["ms"]),
    )
    summary = summarize(scn, trace)
    result = ExperimentResult(trace=trace, summary=summary)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = f"{scn.name}_{scn.controller}"
        result.trace_path = out_dir / f"{stem}_trace.csv"
        result.summary_path = out_dir / f"{stem}_summary.csv"
        write_trace_csv(result.trace_path, trace)
        write_summary_csv(result.summary_path, summary)
        write_timing_sidecar(out_dir / f"{stem}_timing.txt", trace)
    return result
