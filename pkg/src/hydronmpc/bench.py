"""Wall-clock benchmarks for the hot path.

Times three workloads over a grid of model sizes: one hybrid prediction,
one online-residual update, and one full NMPC control cycle.  Also compares
the compiled kernel backend against the pure-numpy fallback on the raw
kernels.  Timing numbers go to a plain-text report; the CSV artifact holds
only the deterministic grid columns (sizes and flop estimates) so repeated
runs stay byte-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from . import _kernels
from .constants import DT, N_INPUT, N_JOINT, N_STATE
from .dataset import HistoryWindow, Normalizer
from .metrics import flops_estimate
from .nmpc import (
    ConstraintSpec,
    CostWeights,
    NmpcConfig,
    NmpcController,
    ReferenceTrajectory,
)
from .plant import PidController, PlantParams
from .residual import MismatchBuffer, ResidualModel, hybrid_predict, online_update
from .ssmp import SsmpModel

# (h, lstm hidden j, horizon N) grid mirroring the reported sweep
DEFAULT_GRID = tuple((h, j, n) for h in (20, 10) for j in (128, 64)
                     for n in (10, 5))

BENCH_CSV_COLUMNS = ("h", "j", "n_horizon", "flops")


@dataclass
class BenchRow:
    h: int
    j: int
    n_horizon: int
    flops: int
    predict_ms: float
    update_ms: float
    cycle_ms: float


def bench_normalizer() -> Normalizer:
    """Fixed, plausible signal ranges; benchmarks need no fitted data."""
    return Normalizer(
        state_min=np.array([-2.0] * 3 + [-2.0] * 3 + [-20.0] * 3),
        state_max=np.array([2.0] * 3 + [2.0] * 3 + [20.0] * 3),
        input_min=np.array([-1.0, -1.0, -1.0, 0.0]),
        input_max=np.array([1.0, 1.0, 1.0, 160.0]),
        delta_min=np.full(N_JOINT, -0.05),
        delta_max=np.full(N_JOINT, 0.05),
    )


def _bench_models(h: int, j: int, n_horizon: int, seed: int):
    """Untrained model pair at the requested sizes (timing only).

    The residual learning rate is vanishingly small so repeated timed
    updates do the full arithmetic without drifting the weights into
    overflow on synthetic data.
    """
    norm = bench_normalizer()
    rng = np.random.default_rng(seed)
    model = SsmpModel.create(h, n_horizon, norm, rng, lstm_hidden=j,
                             head_hidden=(j, j))
    residual = ResidualModel.create(h, n_horizon, norm,
                                    np.random.default_rng(seed + 1),
                                    eta_w=1e-12, eta_b=1e-12)
    return model, residual


def _bench_window(h: int, rng: np.random.Generator) -> HistoryWindow:
    states = rng.uniform(-0.5, 0.5, size=(h, N_STATE))
    inputs = np.column_stack([rng.uniform(-0.8, 0.8, size=(h, 3)),
                              np.full(h, 120.0)])
    return HistoryWindow(states=states, inputs=inputs,
                         y_prev=states[-1, :N_JOINT].copy())


def _filled_buffer(model: SsmpModel, residual: ResidualModel,
                   rng: np.random.Generator) -> MismatchBuffer:
    buffer = MismatchBuffer()
    n = model.n_horizon
    for _ in range(residual.batch_size + 8):
        window = _bench_window(model.h, rng)
        future = np.column_stack([rng.uniform(-0.8, 0.8, size=(n, 3)),
                                  np.full(n, 120.0)])
        offline = window.y_prev + rng.normal(0, 0.01, size=(n, N_JOINT))
        actual = offline + rng.normal(0, 0.005, size=(n, N_JOINT))
        buffer.push(window, future, offline, actual)
    return buffer


def _time_call(fn, repetitions: int, warmup: int = 3) -> float:
    """Mean milliseconds per call."""
    for _ in range(warmup):
        fn()
    t0 = time.perf_counter()
    for _ in range(repetitions):
        fn()
    return (time.perf_counter() - t0) * 1e3 / repetitions


def _cycle_timer(model: SsmpModel, residual: ResidualModel, k1: int,
                 k2: int, rng: np.random.Generator):
    """Closure running one warmed-up controller cycle per call."""
    n = model.n_horizon
    controller = NmpcController(
        model, residual, CostWeights(), ConstraintSpec(),
        NmpcConfig(n_horizon=n, k1=k1, eta_u=0.5, k2=k2),
        PidController.canonical(PlantParams()))
    state = np.zeros(N_STATE)
    state[:N_JOINT] = [0.0, 0.35, -0.65]
    pose = state[:N_JOINT] + 0.1
    samples = np.tile(pose, (n + 1, 1))
    traj = ReferenceTrajectory.from_samples(samples, dt=DT)
    clock = {"t": 0.0}

    def one_cycle():
        controller.cycle(state, traj, pose, now=clock["t"])
        clock["t"] += DT

    # fill the history window and the mismatch pipeline before timing
    for _ in range(model.h + n + 2):
        one_cycle()
    return one_cycle


def timing_bench(grid=DEFAULT_GRID, repetitions: int = 1000, seed: int = 0,
                 k1: int = 30, update_loops: int = 10) -> list:
    """Mean ms for prediction / online update / full NMPC cycle per size."""
    rows = []
    for h, j, n in grid:
        rng = np.random.default_rng(seed)
        model, residual = _bench_models(h, j, n, seed)
        window = _bench_window(h, rng)
        future = np.column_stack([rng.uniform(-0.8, 0.8, size=(n, 3)),
                                  np.full(n, 120.0)])
        buffer = _filled_buffer(model, residual, rng)
        predict_ms = _time_call(
            lambda: hybrid_predict(model, residual, window, future),
            repetitions)
        update_ms = _time_call(
            lambda: online_update(residual, buffer, update_loops),
            repetitions)
        cycle_ms = _time_call(
            _cycle_timer(model, residual, k1, update_loops, rng),
            repetitions)
        rows.append(BenchRow(h=h, j=j, n_horizon=n,
                             flops=flops_estimate(h, N_STATE, N_INPUT, j, n),
                             predict_ms=predict_ms, update_ms=update_ms,
                             cycle_ms=cycle_ms))
    return rows


def flops_time_rank_correlation(rows) -> float:
    """Spearman rho between flop estimates and measured prediction times."""
    flops = [row.flops for row in rows]
    times = [row.predict_ms for row in rows]
    rho, _ = stats.spearmanr(flops, times)
    return float(rho)


def backend_compare(h: int = 20, j: int = 128, n_horizon: int = 10,
                    repetitions: int = 1000, seed: int = 0) -> dict:
    """Mean ms of the raw kernels per available backend."""
    model, residual = _bench_models(h, j, n_horizon, seed)
    rng = np.random.default_rng(seed)
    seq = rng.uniform(0.0, 1.0, size=(h, N_STATE + N_INPUT))
    head_in = rng.uniform(0.0, 1.0, size=model.head.weights[0].shape[0])
    out = {}
    for name, impl in _kernels.available_backends().items():
        lstm_ms = _time_call(
            lambda: impl.lstm_final_hidden(model.lstm.wx, model.lstm.wh,
                                           model.lstm.b, seq), repetitions)
        mlp_ms = _time_call(
            lambda: impl.mlp_eval(model.head.weights, model.head.biases,
                                  head_in), repetitions)
        _, pre = impl.mlp_eval(model.head.weights, model.head.biases, head_in)
        jac_ms = _time_call(
            lambda: impl.mlp_input_jac(model.head.weights, pre), repetitions)
        out[name] = {"lstm_ms": lstm_ms, "mlp_ms": mlp_ms, "jac_ms": jac_ms}
    return out


def write_bench_csv(path, rows) -> None:
    """Deterministic grid columns only; wall times go to the text report."""
    lines = [",".join(BENCH_CSV_COLUMNS)]
    for row in rows:
        lines.append(f"{row.h},{row.j},{row.n_horizon},{row.flops}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_bench_report(path, rows, backends: dict = None) -> None:
    lines = ["workload timings (mean ms per call)",
             f"active kernel backend: {_kernels.active_backend()}",
             "",
             "h    j    N    flops      predict   update    cycle"]
    for row in rows:
        lines.append("%-4d %-4d %-4d %-10d %-9.3f %-9.3f %-9.3f"
                     % (row.h, row.j, row.n_horizon, row.flops,
                        row.predict_ms, row.update_ms, row.cycle_ms))
    if backends:
        lines += ["", "kernel backends at the largest grid point:"]
        for name, vals in sorted(backends.items()):
            lines.append("%-9s lstm %-8.3f mlp %-8.3f jac %-8.3f"
                         % (name, vals["lstm_ms"], vals["mlp_ms"],
                            vals["jac_ms"]))
    Path(path).write_text("\n".join(lines) + "\n")
