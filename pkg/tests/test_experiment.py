"""Closed-loop harness: traces, summaries, CSV artifacts, determinism."""

import numpy as np
import pytest

from hydronmpc.dataset import fit_normalizer
from hydronmpc.errors import ConfigError, ContractError
from hydronmpc.experiment import (
    SUMMARY_COLUMNS,
    TRACE_COLUMNS,
    RunTrace,
    run_experiment,
    summarize,
    write_trace_csv,
)
from hydronmpc.metrics import rmse
from hydronmpc.nmpc import ConstraintSpec, CostWeights, NmpcConfig
from hydronmpc.plant import PlantParams, Workspace, collect_open_loop
from hydronmpc.residual import ResidualModel
from hydronmpc.scenario import ControllerSetup, Scenario
from hydronmpc.ssmp import SsmpModel

_NORM = None


def _normalizer():
    """Normalizer fit on a small batch of real plant data (cached)."""
    global _NORM
    if _NORM is None:
        store = collect_open_loop(PlantParams(), Workspace(),
                                  episodes=4, steps=120, seed=11)
        _NORM = fit_normalizer(store)
    return _NORM


def _nmpc_bits(seed=0, h=4, n=3):
    """Fresh (untrained) model pair plus a small controller setup."""
    norm = _normalizer()
    model = SsmpModel.create(h, n, norm, np.random.default_rng(seed),
                             lstm_hidden=8, head_hidden=(16, 16))
    residual = ResidualModel.create(h, n, norm,
                                    np.random.default_rng(seed + 1),
                                    hidden=(16,))
    setup = ControllerSetup(
        weights=CostWeights(),
        constraints=ConstraintSpec(),
        config=NmpcConfig(n_horizon=n, k1=3, eta_u=0.25, k2=2),
        history=h)
    return model, residual, setup


def _sine_scenario(controller, duration=1.0, name="case"):
    return Scenario(name=name, duration=duration, controller=controller,
                    gear="high",
                    start=np.array([0.0, 0.35, -0.65]),
                    ref_kind="sine",
                    ref_center=np.array([0.0, 0.4, -0.6]),
                    ref_amp=np.array([0.2, 0.15, 0.1]),
                    ref_freq=np.array([0.2, 0.15, 0.2]),
                    ref_phase=np.zeros(3))


def _toy_trace():
    t = np.arange(4) * 0.02
    states = np.zeros((4, 9))
    states[:, 0] = [0.0, 0.1, 0.2, 0.3]       # swing position
    states[:, 1] = 0.35                        # folded pose: inside the
    states[:, 2] = -0.65                       # cartesian radius bound
    refs = np.zeros((4, 3))
    refs[:, 0] = 0.2
    refs[:, 1] = 0.35
    refs[:, 2] = -0.65
    inputs = np.zeros((4, 4))
    inputs[:, 3] = [80.0, 80.0, 120.0, 120.0]
    supply = np.full(4, 0.2)
    zeros = np.zeros(4)
    return RunTrace(t=t, states=states, refs=refs, inputs=inputs,
                    supply=supply, demand=supply.copy(), overflow=zeros,
                    j_initial=zeros, j_final=zeros, eta=zeros,
                    warm_up=np.array([1.0, 1.0, 0.0, 0.0]), fault=zeros,
                    cycle_ms=zeros)


# ---------------------------------------------------------------------------
# RunTrace and summarize
# ---------------------------------------------------------------------------

def test_trace_validates_lengths():
    trace = _toy_trace()
    with pytest.raises(ContractError):
        RunTrace(t=trace.t, states=trace.states[:3], refs=trace.refs,
                 inputs=trace.inputs, supply=trace.supply,
                 demand=trace.demand, overflow=trace.overflow,
                 j_initial=trace.j_initial, j_final=trace.j_final,
                 eta=trace.eta, warm_up=trace.warm_up, fault=trace.fault,
                 cycle_ms=trace.cycle_ms)


def test_trace_validates_uniform_time():
    trace = _toy_trace()
    t = trace.t.copy()
    t[-1] += 0.005
    with pytest.raises(ContractError):
        RunTrace(t=t, states=trace.states, refs=trace.refs,
                 inputs=trace.inputs, supply=trace.supply,
                 demand=trace.demand, overflow=trace.overflow,
                 j_initial=trace.j_initial, j_final=trace.j_final,
                 eta=trace.eta, warm_up=trace.warm_up, fault=trace.fault,
                 cycle_ms=trace.cycle_ms)


def test_summarize_oracle_values():
    scn = Scenario(name="toy", controller="pid", duration=0.08)
    summary = summarize(scn, _toy_trace())
    # swing errors: -0.2, -0.1, 0.0, 0.1
    expected = np.sqrt((0.04 + 0.01 + 0.0 + 0.01) / 4)
    assert summary["rmse_swing"] == pytest.approx(expected, rel=1e-12)
    assert summary["rmse_boom"] == 0.0
    # tail = 4 // 4 = 1 sample -> |0.3 - 0.2|
    assert summary["steady_swing"] == pytest.approx(0.1, rel=1e-12)
    assert summary["gear_switches"] == 1
    assert summary["warm_cycles"] == 2
    assert summary["faults"] == 0
    assert summary["final_e"] == 1.0 and summary["e_undefined"] == 0
    assert summary["violations"] == 0
    assert set(SUMMARY_COLUMNS) == set(summary)


def test_summarize_counts_violations():
    trace = _toy_trace()
    trace.states[1, 0] = 2.5  # outside the swing box
    scn = Scenario(name="toy", controller="pid", duration=0.08)
    assert summarize(scn, trace)["violations"] == 1


def test_trace_csv_round_trip(tmp_path):
    trace = _toy_trace()
    path = tmp_path / "trace.csv"
    write_trace_csv(path, trace)
    header = path.read_text().splitlines()[0]
    assert header == ",".join(TRACE_COLUMNS)
    back = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(back, trace.table())


# ---------------------------------------------------------------------------
# PID runs
# ---------------------------------------------------------------------------

def test_pid_run_tracks_sine(tmp_path):
    scn = _sine_scenario("pid", duration=2.0)
    result = run_experiment(scn, ControllerSetup.default(), out_dir=tmp_path)
    trace = result.trace
    assert trace.n_cycles == 100
    assert np.all(trace.inputs[:, 3] == 160.0)  # fixed high gear
    assert np.all(np.isnan(trace.j_initial))    # no optimizer in the loop
    assert trace.warm_up.sum() == 0
    assert result.summary["rmse_boom"] < 0.15
    assert result.trace_path.exists() and result.summary_path.exists()
    assert (tmp_path / "case_pid_timing.txt").exists()


def test_pid_summary_matches_trace():
    scn = _sine_scenario("pid", duration=1.0)
    result = run_experiment(scn, ControllerSetup.default())
    trace = result.trace
    for i, joint in enumerate(("swing", "boom", "arm")):
        expected = rmse(trace.states[:, i], trace.refs[:, i])
        assert result.summary[f"rmse_{joint}"] == pytest.approx(
            expected, rel=1e-12)


def test_pid_run_deterministic(tmp_path):
    scn = _sine_scenario("pid", duration=0.5)
    a = run_experiment(scn, ControllerSetup.default(), out_dir=tmp_path / "a")
    b = run_experiment(scn, ControllerSetup.default(), out_dir=tmp_path / "b")
    assert a.trace_path.read_bytes() == b.trace_path.read_bytes()
    assert a.summary_path.read_bytes() == b.summary_path.read_bytes()


# ---------------------------------------------------------------------------
# NMPC runs
# ---------------------------------------------------------------------------

def test_nmpc_run_shape_and_bounds(tmp_path):
    model, residual, setup = _nmpc_bits()
    scn = _sine_scenario("nmpc", duration=1.0)
    result = run_experiment(scn, setup, model=model, residual=residual,
                            out_dir=tmp_path)
    trace = result.trace
    assert trace.n_cycles == 50
    assert int(trace.warm_up.sum()) == model.h
    valves = trace.inputs[:, :3]
    assert np.all(valves >= -1.0) and np.all(valves <= 1.0)
    assert np.all(np.isin(trace.inputs[:, 3], [80.0, 120.0, 160.0]))
    assert result.summary["faults"] == 0
    assert (tmp_path / "case_nmpc_trace.csv").exists()


def test_nmpc_gear_cooldown_in_trace():
    model, residual, setup = _nmpc_bits(seed=3)
    scn = _sine_scenario("nmpc", duration=1.5)
    trace = run_experiment(scn, setup, model=model, residual=residual).trace
    omega = trace.inputs[:, 3]
    switch_times = trace.t[1:][omega[1:] != omega[:-1]]
    if switch_times.size > 1:
        assert np.all(np.diff(switch_times)
                      >= setup.constraints.t_switch - 1e-12)


def test_nmpc_run_deterministic(tmp_path):
    scn = _sine_scenario("nmpc", duration=0.8)
    paths = []
    for sub in ("a", "b"):
        model, residual, setup = _nmpc_bits(seed=5)
        result = run_experiment(scn, setup, model=model, residual=residual,
                                out_dir=tmp_path / sub)
        paths.append(result)
    assert paths[0].trace_path.read_bytes() == paths[1].trace_path.read_bytes()
    assert (paths[0].summary_path.read_bytes()
            == paths[1].summary_path.read_bytes())


def test_nmpc_first_element_extraction_runs():
    model, residual, setup = _nmpc_bits(seed=7)
    scn = _sine_scenario("nmpc", duration=0.5)
    result = run_experiment(scn, setup, model=model, residual=residual,
                            extraction="first")
    assert result.trace.n_cycles == 25
    assert result.summary["faults"] == 0


def test_nmpc_requires_models():
    scn = _sine_scenario("nmpc")
    with pytest.raises(ConfigError):
        run_experiment(scn, ControllerSetup.default())


def test_nmpc_rejects_history_mismatch():
    model, residual, setup = _nmpc_bits()
    setup.history = model.h + 2
    scn = _sine_scenario("nmpc")
    with pytest.raises(ConfigError):
        run_experiment(scn, setup, model=model, residual=residual)
