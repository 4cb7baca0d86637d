"""Gradient-descent NMPC on the hybrid predictor.

Each control cycle optimizes the N-step input sequence U (three valve
channels plus continuous engine speed) by plain gradient descent with an
error-adaptive learning rate, clamping after every step.  The engine-speed
channel is relaxed to a continuous variable during the descent and the mean
of the optimized sequence is snapped to the nearest allowed gear afterwards,
subject to a switch cooldown.  The emitted command is the per-channel mean
of the optimized sequence.

The predictor's LSTM encoding depends only on the (fixed) history window, so
it is evaluated once per cycle and cached; descent iterations touch only the
MLP heads of the offline and online models.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .constants import DT, N_INPUT, N_JOINT
from .dataset import HistoryWindow
from .errors import ConfigError, ContractError, PredictionError
from .plant import PidController, pid_step
from .residual import MismatchBuffer, ResidualModel, online_update
from .ssmp import SsmpModel, normalized_history
from .ssmp import predict as ssmp_predict


@dataclass(frozen=True)
class CostWeights:
    """Diagonal weights: position error, velocity error, engine speed."""

    a: float = 1.0
    b: float = 0.1
    c: float = 1e-6

    def __post_init__(self):
        # All-zero weights are allowed here (degenerate but well-defined cost);
        # the controller constructor rejects them.
        if self.a < 0 or self.b < 0 or self.c < 0:
            raise ConfigError("cost weights must be non-negative")


@dataclass(frozen=True)
class ConstraintSpec:
    """Input bounds, allowed gear speeds, switch cooldown, error threshold."""

    u_min: tuple = (-1.0, -1.0, -1.0)
    u_max: tuple = (1.0, 1.0, 1.0)
    gears: tuple = (80.0, 120.0, 160.0)
    t_switch: float = 1.0
    error_threshold: float = 0.05  # e in the adaptive learning-rate rule

    def __post_init__(self):
        if any(lo >= hi for lo, hi in zip(self.u_min, self.u_max)):
            raise ConfigError("u_min must be below u_max")
        if not self.gears or any(g <= 0 for g in self.gears):
            raise ConfigError("gear set must be nonempty and positive")
        if tuple(sorted(self.gears)) != tuple(self.gears):
            raise ConfigError("gear speeds must be sorted ascending")
        if self.t_switch < 1.0:
            raise ConfigError("gear switch cooldown must be at least 1 s")
        if self.error_threshold <= 0:
            raise ConfigError("error threshold must be positive")

    def bounds(self) -> tuple:
        """Per-channel clamp bounds for the full 4-channel decision vector.

        The relaxed engine-speed channel is bounded by [0, highest gear];
        the discrete gear set is enforced by projection, not clamping.
        """
        lo = np.array(list(self.u_min) + [0.0])
        hi = np.array(list(self.u_max) + [self.gears[-1]])
        return lo, hi


@dataclass(frozen=True)
class NmpcConfig:
    n_horizon: int = 10
    k1: int = 30          # gradient-descent iterations per cycle
    eta_u: float = 0.5    # base learning rate
    k2: int = 30          # online-update loops per cycle

    def __post_init__(self):
        if self.k1 < 1:
            raise ConfigError("k1 must be at least 1")
        if self.eta_u <= 0:
            raise ConfigError("eta_u must be positive")
        if self.n_horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if self.k2 < 0:
            raise ConfigError("k2 must be non-negative")


@dataclass
class ReferenceTrajectory:
    """Reference positions and velocities over the horizon."""

    positions: np.ndarray   # (N, 3)
    velocities: np.ndarray  # (N, 3)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.velocities = np.asarray(self.velocities, dtype=np.float64)
        if self.positions.shape != self.velocities.shape \
                or self.positions.ndim != 2 \
                or self.positions.shape[1] != N_JOINT:
            raise ContractError("reference must be (N, 3) positions and velocities")

    @classmethod
    def from_samples(cls, samples: np.ndarray, dt: float = DT):
        """Build from N+1 position samples at t, t+1, ..., t+N."""
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[0] < 2:
            raise ContractError("need at least two reference samples")
        return cls(positions=samples[1:],
                   velocities=np.diff(samples, axis=0) / dt)

    @property
    def n_horizon(self) -> int:
        return self.positions.shape[0]


# ---------------------------------------------------------------------------
# cost and gradient
# ---------------------------------------------------------------------------

def cost_eval(weights: CostWeights, reference: ReferenceTrajectory,
              y_hat: np.ndarray, y_dot: np.ndarray,
              omega_seq: np.ndarray) -> float:
    """J = a·‖R_Y − Ŷ‖² + b·‖R_Ẏ − Ŷ̇‖² + c·‖ω‖² over the horizon."""
    n = reference.n_horizon
    if y_hat.shape != (n, N_JOINT) or y_dot.shape != (n, N_JOINT) \
            or omega_seq.shape != (n,):
        raise ContractError("cost_eval: sequence length mismatch")
    ep = reference.positions - y_hat
    ev = reference.velocities - y_dot
    return float(weights.a * np.sum(ep * ep) + weights.b * np.sum(ev * ev)
                 + weights.c * np.sum(omega_seq * omega_seq))


def predicted_velocity(y_hat: np.ndarray, y_current: np.ndarray,
                       dt: float = DT) -> np.ndarray:
    """Finite-difference horizon velocity, anchored at the measured position."""
    prev = np.vstack([y_current[None, :], y_hat[:-1]])
    return (y_hat - prev) / dt


def _cost_terms_gradient(weights: CostWeights, reference: ReferenceTrajectory,
                         y_hat: np.ndarray, y_dot: np.ndarray,
                         dt: float = DT) -> np.ndarray:
    """∂J/∂Ŷ (N,3), including the velocity coupling between adjacent rows."""
    d_pos = 2.0 * weights.a * (y_hat - reference.positions)
    dv = 2.0 * weights.b * (y_dot - reference.velocities) / dt
    d_vel = dv.copy()
    d_vel[:-1] -= dv[1:]  # Ŷ_i also appears (negated) in the i+1 velocity row
    return d_pos + d_vel


def adapt_learning_rate(eta_u: float, ref_y: np.ndarray, y: np.ndarray,
                        threshold: float) -> float:
    """Piecewise rule: full rate above the error threshold, scaled below it."""
    if threshold <= 0:
        raise ConfigError("error threshold must be positive")
    err = float(np.max(np.abs(np.asarray(ref_y) - np.asarray(y))))
    return eta_u if err >= threshold else eta_u * err


# ---------------------------------------------------------------------------
# cached hybrid predictor context
# ---------------------------------------------------------------------------

class HybridContext:
    """Per-cycle predictor state: the LSTM encoding of the (fixed) history
    window plus normalization pieces, so descent iterations only evaluate
    the offline head and online residual MLPs."""

    def __init__(self, model: SsmpModel, window: HistoryWindow,
                 residual: ResidualModel = None):
        if residual is not None and (residual.h != model.h
                                     or residual.n_horizon != model.n_horizon):
            raise ConfigError("offline and online model shapes disagree")
        self.model = model
        self.residual = residual
        self.window = window
        self.n_horizon = model.n_horizon
        norm = model.normalizer
        seq = normalized_history(model, window)
        self.hidden = _kernels.lstm_final_hidden(
            model.lstm.wx, model.lstm.wh, model.lstm.b, seq)
        if residual is not None:
            hist_states = norm.norm_states(window.states).ravel()
            hist_inputs = norm.norm_inputs(window.inputs).ravel()
            self._resid_hist = np.concatenate([hist_states, hist_inputs])
        self.y_prev = window.y_prev
        self._delta_scale = np.tile(norm.delta_scale, self.n_horizon)
        self._input_scale = np.tile(norm.input_scale, self.n_horizon)
        self._input_min = np.tile(norm.input_min, self.n_horizon)

    def _norm_u(self, u_seq: np.ndarray) -> np.ndarray:
        flat = np.asarray(u_seq, dtype=np.float64).reshape(-1)
        if flat.shape[0] != N_INPUT * self.n_horizon:
            raise ContractError("input sequence has the wrong length")
        return (flat - self._input_min) / self._input_scale

    def predict(self, u_seq: np.ndarray) -> np.ndarray:
        """Hybrid horizon prediction (N, 3) for a candidate input sequence."""
        u_norm = self._norm_u(u_seq)
        head_in = np.concatenate([self.hidden, u_norm])
        out, _ = _kernels.mlp_eval(self.model.head.weights,
                                   self.model.head.biases, head_in)
        if self.residual is not None:
            r_in = np.concatenate([self._resid_hist, u_norm])
            r_out, _ = _kernels.mlp_eval(self.residual.net.weights,
                                         self.residual.net.biases, r_in)
            out = out + r_out
        if not np.all(np.isfinite(out)):
            raise PredictionError("non-finite hybrid prediction")
        delta = out * self._delta_scale
        return delta.reshape(self.n_horizon, N_JOINT) + self.y_prev

    def jacobian(self, u_seq: np.ndarray) -> np.ndarray:
        """∂Ŷ/∂U (3N, 4N) of the hybrid prediction at the candidate sequence."""
        u_norm = self._norm_u(u_seq)
        head_in = np.concatenate([self.hidden, u_norm])
        _, pre = _kernels.mlp_eval(self.model.head.weights,
                                   self.model.head.biases, head_in)
        jac = _kernels.mlp_input_jac(self.model.head.weights, pre)
        jac_u = jac[:, self.model.lstm.hidden_size:]
        if self.residual is not None:
            r_in = np.concatenate([self._resid_hist, u_norm])
            _, r_pre = _kernels.mlp_eval(self.residual.net.weights,
                                         self.residual.net.biases, r_in)
            r_jac = _kernels.mlp_input_jac(self.residual.net.weights, r_pre)
            jac_u = jac_u + r_jac[:, self._resid_hist.shape[0]:]
        return jac_u * self._delta_scale[:, None] / self._input_scale[None, :]


def cost_gradient(weights: CostWeights, reference: ReferenceTrajectory,
                  ctx, u_seq: np.ndarray, y_current: np.ndarray,
                  dt: float = DT) -> np.ndarray:
    """Analytic ∂J/∂U (4N,), chained through the hybrid predictor."""
    n = reference.n_horizon
    u = np.asarray(u_seq, dtype=np.float64).reshape(n, N_INPUT)
    y_hat = ctx.predict(u)
    y_dot = predicted_velocity(y_hat, y_current, dt)
    d_y = _cost_terms_gradient(weights, reference, y_hat, y_dot, dt)
    grad = ctx.jacobian(u).T @ d_y.reshape(-1)
    grad = grad.reshape(n, N_INPUT)
    grad[:, 3] += 2.0 * weights.c * u[:, 3]
    return grad.reshape(-1)


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

def gd_optimize(ctx, reference: ReferenceTrajectory, weights: CostWeights,
                constraints: ConstraintSpec, config: NmpcConfig,
                y_current: np.ndarray, eta: float = None,
                dt: float = DT) -> tuple:
    """Projected gradient descent from U = 0 in half-span coordinates.

    Returns (U (N,4), info).  Each channel descends as if rescaled onto
    [-1, 1], so one learning rate serves the ±1 valve channels and the
    0..ω_max engine channel alike; in physical units the step picks up
    the squared half-span (chain rule applied both ways), which is 1 for
    the valves and (ω_max/2)² for the engine.  Each iteration takes one
    step and clamps; if the step increased J the rate is halved and the
    step retried once, then reverted, so the recorded J trace is
    non-increasing.  A non-finite cost aborts with info["fault"] set and
    U = None (hold-last failsafe upstream).
    """
    n = reference.n_horizon
    if n != ctx.n_horizon:
        raise ContractError("reference horizon does not match the predictor")
    lo, hi = constraints.bounds()
    lo_seq = np.tile(lo, (n, 1)).reshape(-1)
    hi_seq = np.tile(hi, (n, 1)).reshape(-1)
    scale = ((hi_seq - lo_seq) / 2.0) ** 2
    eta = config.eta_u if eta is None else eta
    u = np.zeros(n * N_INPUT)
    info = {"j_trace": [], "fault": False, "eta": eta}

    def evaluate(u_flat):
        y_hat = ctx.predict(u_flat)
        y_dot = predicted_velocity(y_hat, y_current, dt)
        return cost_eval(weights, reference, y_hat, y_dot,
                         u_flat.reshape(n, N_INPUT)[:, 3])

    try:
        j = evaluate(u)
    except PredictionError:
        info["fault"] = True
        return None, info
    if not np.isfinite(j):
        info["fault"] = True
        return None, info
    info["j_trace"].append(j)

    for _ in range(config.k1):
        try:
            grad = cost_gradient(weights, reference, ctx, u, y_current, dt)
        except PredictionError:
            info["fault"] = True
            return None, info
        if not np.all(np.isfinite(grad)):
            info["fault"] = True
            return None, info
        step = eta
        accepted = False
        for _attempt in range(2):
            cand = np.clip(u - step * scale * grad, lo_seq, hi_seq)
            try:
                j_cand = evaluate(cand)
            except PredictionError:
                info["fault"] = True
                return None, info
            if not np.isfinite(j_cand):
                info["fault"] = True
                return None, info
            if j_cand <= j:
                u, j = cand, j_cand
                accepted = True
                break
            step *= 0.5  # backtrack: halve the rate and retry once
        info["j_trace"].append(j)
        if not accepted:
            continue  # revert: keep the previous iterate
    return u.reshape(n, N_INPUT), info


def project_gear(omega_seq: np.ndarray, gears, last_switch_time: float,
                 t_switch: float, now: float, current_gear: float) -> float:
    """Snap the mean relaxed engine speed to a gear, honoring the cooldown."""
    mean = float(np.mean(omega_seq))
    dist = np.abs(np.asarray(gears, dtype=float) - mean)
    choice = float(gears[int(np.argmin(dist))])  # argmin ties pick the lower
    if choice != current_gear and (now - last_switch_time) < t_switch:
        return current_gear
    return choice


def extract_control(u_seq: np.ndarray, lo=None, hi=None) -> np.ndarray:
    """Per-channel arithmetic mean of the optimized sequence.

    The mean is the exact arithmetic mean; bounds, when given, clamp it
    afterwards.
    """
    u_seq = np.asarray(u_seq, dtype=np.float64)
    if u_seq.ndim != 2 or u_seq.shape[0] < 1:
        raise ContractError("control sequence must be a nonempty (N, m) array")
    mean = u_seq.mean(axis=0)
    if lo is not None or hi is not None:
        mean = np.clip(mean, lo, hi)
    return mean


# ---------------------------------------------------------------------------
# controller
# ---------------------------------------------------------------------------

@dataclass
class CycleDiagnostics:
    j_initial: float = np.nan
    j_final: float = np.nan
    eta: float = np.nan
    gear: float = np.nan
    warm_up: bool = False
    fault: bool = False
    cycle_ms: float = 0.0
    online_losses: list = field(default_factory=list)


class NmpcController:
    """Receding-horizon controller following the per-cycle ordering:
    read state, adapt the learning rate, run the descent on the pre-update
    online model, record the matured prediction mismatch, run the online
    updates, then emit the sequence-mean control."""

    def __init__(self, model: SsmpModel, residual: ResidualModel,
                 weights: CostWeights, constraints: ConstraintSpec,
                 config: NmpcConfig, pid: PidController,
                 buffer: MismatchBuffer = None, initial_gear: float = None,
                 extraction: str = "mean"):
        if config.n_horizon != model.n_horizon:
            raise ConfigError("config horizon must match the trained model")
        if weights.a == 0 and weights.b == 0 and weights.c == 0:
            raise ConfigError("controller needs at least one nonzero weight")
        if extraction not in ("mean", "first"):
            raise ConfigError(f"unknown extraction mode {extraction!r}")
        self.extraction = extraction
        self.model = model
        self.residual = residual
        self.weights = weights
        self.constraints = constraints
        self.config = config
        self.pid = pid
        self.buffer = MismatchBuffer() if buffer is None else buffer
        self.gear = constraints.gears[-1] if initial_gear is None \
            else float(initial_gear)
        self.last_switch_time = -np.inf
        # Trailing history; anything older than h + N + 1 samples is never
        # needed (window depth plus the matured-mismatch lookback).
        self._keep = model.h + config.n_horizon + 1
        self._states = []   # recorded sensor states, one per cycle
        self._inputs = []   # commands actually emitted, one per cycle
        self._last_command = np.array([0.0, 0.0, 0.0, self.gear])

    @property
    def h(self) -> int:
        return self.model.h

    def _window(self) -> HistoryWindow:
        h = self.h
        states = np.asarray(self._states[-h:])
        inputs = np.asarray(self._inputs[-h:])
        return HistoryWindow(states=states, inputs=inputs,
                             y_prev=states[-1, :N_JOINT].copy())

    def _record_mismatch(self) -> None:
        """Compute the matured mismatch for the prediction anchored N cycles
        ago, now that its realized outcome is fully known, and buffer it."""
        h, n = self.h, self.config.n_horizon
        if len(self._states) < h + n + 1:
            return
        states = np.asarray(self._states)
        inputs = np.asarray(self._inputs)
        t = len(states) - 1 - n  # anchor index
        window = HistoryWindow(states=states[t - h + 1:t + 1],
                               inputs=inputs[t - h:t],
                               y_prev=states[t - 1, :N_JOINT].copy())
        future = inputs[t:t + n]
        offline = ssmp_predict(self.model, window, future)
        actual = states[t + 1:t + 1 + n, :N_JOINT]
        self.buffer.push(window, future, offline, actual)

    def cycle(self, state: np.ndarray, reference: ReferenceTrajectory,
              ref_current: np.ndarray, now: float) -> tuple:
        """One 20 ms control decision; returns (InputVector, diagnostics)."""
        t0 = time.perf_counter()
        diag = CycleDiagnostics()
        state = np.asarray(state, dtype=np.float64)
        y = state[:N_JOINT]
        self._states.append(state.copy())
        if len(self._states) > self._keep:
            del self._states[0]

        if len(self._inputs) < self.h:
            # not enough recorded (state, input) pairs to form a window yet
            u = pid_step(self.pid, ref_current, y)
            command = np.concatenate([u, [self.gear]])
            diag.warm_up = True
            diag.gear = self.gear
        else:
            eta = adapt_learning_rate(self.config.eta_u, ref_current, y,
                                      self.constraints.error_threshold)
            diag.eta = eta
            ctx = HybridContext(self.model, self._window(), self.residual)
            u_seq, info = gd_optimize(ctx, reference, self.weights,
                                      self.constraints, self.config, y,
                                      eta=eta)
            self._record_mismatch()
            if self.config.k2 > 0:
                result = online_update(self.residual, self.buffer,
                                       self.config.k2)
                diag.online_losses = result.losses
            if info["fault"] or u_seq is None:
                diag.fault = True
                command = self._last_command.copy()
            else:
                diag.j_initial = info["j_trace"][0]
                diag.j_final = info["j_trace"][-1]
                if self.extraction == "mean":
                    picked = extract_control(u_seq)
                else:
                    picked = u_seq[0].copy()
                gear = project_gear(u_seq[:, 3], self.constraints.gears,
                                    self.last_switch_time,
                                    self.constraints.t_switch, now, self.gear)
                if gear != self.gear:
                    self.gear = gear
                    self.last_switch_time = now
                lo, hi = self.constraints.bounds()
                valves = np.clip(picked[:3], lo[:3], hi[:3])
                command = np.concatenate([valves, [self.gear]])
                diag.gear = self.gear
        self._inputs.append(command.copy())
        if len(self._inputs) > self._keep - 1:
            del self._inputs[0]  # one shorter than states: stays cycle-aligned
        self._last_command = command.copy()
        diag.cycle_ms = (time.perf_counter() - t0) * 1e3
        return command, diag
