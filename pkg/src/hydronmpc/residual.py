"""Online residual model: a small MLP trained during operation on the
mismatch between the offline predictor and the realized plant, plus the
hybrid predictor that sums both.

The residual consumes the same normalized history/future blocks as the
offline model, flattened to one vector of dim 13h + 4N, and emits the N x 3
correction in normalized delta units.  It starts near zero (tiny weights,
zero biases) so the hybrid initially equals the offline prediction.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .constants import N_INPUT, N_JOINT, N_STATE
from .dataset import HistoryWindow, Normalizer
from .errors import ConfigError, PredictionError
from .nn import MlpNetwork, mlp_batch_backward, mlp_batch_forward, sgd_minibatch_step
from .ssmp import SsmpModel, predict

INIT_SCALE = 1e-3
DEFAULT_HIDDEN = (64, 64)


@dataclass
class ResidualModel:
    """Residual MLP H plus its online-training hyperparameters."""

    net: MlpNetwork
    normalizer: Normalizer
    h: int
    n_horizon: int
    eta_w: float = 0.005
    eta_b: float = 0.005
    batch_size: int = 32

    def __post_init__(self):
        want_in = (N_STATE + N_INPUT) * self.h + N_INPUT * self.n_horizon
        if self.net.input_dim != want_in:
            raise ConfigError(f"residual input dim {self.net.input_dim}, expected {want_in}")
        if self.net.output_dim != N_JOINT * self.n_horizon:
            raise ConfigError("residual output dim must be 3*N")

    @classmethod
    def create(cls, h: int, n_horizon: int, normalizer: Normalizer,
               rng: np.random.Generator, hidden: tuple = DEFAULT_HIDDEN,
               eta_w: float = 0.005, eta_b: float = 0.005,
               batch_size: int = 32) -> "ResidualModel":
        dims = [(N_STATE + N_INPUT) * h + N_INPUT * n_horizon,
                *hidden, N_JOINT * n_horizon]
        net = MlpNetwork.create(dims, rng, weight_scale=INIT_SCALE)
        return cls(net=net, normalizer=normalizer, h=h, n_horizon=n_horizon,
                   eta_w=eta_w, eta_b=eta_b, batch_size=batch_size)

    def copy(self) -> "ResidualModel":
        return ResidualModel(net=self.net.copy(), normalizer=self.normalizer,
                             h=self.h, n_horizon=self.n_horizon,
                             eta_w=self.eta_w, eta_b=self.eta_b,
                             batch_size=self.batch_size)


def reset(model: ResidualModel, seed: int,
          buffer: "MismatchBuffer | None" = None) -> ResidualModel:
    """Fresh residual (weights re-drawn at the +-1e-3 scale); clears buffer."""
    rng = np.random.default_rng(seed)
    hidden = tuple(w.shape[1] for w in model.net.weights[:-1])
    fresh = ResidualModel.create(model.h, model.n_horizon, model.normalizer,
                                 rng, hidden=hidden, eta_w=model.eta_w,
                                 eta_b=model.eta_b, batch_size=model.batch_size)
    if buffer is not None:
        buffer.clear()
    return fresh


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def residual_input(model: ResidualModel, window: HistoryWindow,
                   future_inputs: np.ndarray) -> np.ndarray:
    """Flattened normalized [X_t^h, U_{t-1}^h, U_{t:t+N-1}] vector."""
    if window.h != model.h:
        raise ConfigError(f"window has h={window.h}, model expects {model.h}")
    fut = np.asarray(future_inputs, dtype=np.float64)
    if fut.shape != (model.n_horizon, N_INPUT):
        raise ConfigError(f"future inputs must be ({model.n_horizon}, {N_INPUT})")
    norm = model.normalizer
    return np.concatenate([norm.norm_states(window.states).ravel(),
                           norm.norm_inputs(window.inputs).ravel(),
                           norm.norm_inputs(fut).ravel()])


def predict_residual(model: ResidualModel, window: HistoryWindow,
                     future_inputs: np.ndarray) -> np.ndarray:
    """Residual correction X_hat_error_{t+1:t+N}, shape (N, 3), in radians."""
    x = residual_input(model, window, future_inputs)
    if not np.all(np.isfinite(x)):
        raise PredictionError("non-finite value in residual input")
    out, _ = _kernels.mlp_eval(model.net.weights, model.net.biases, x)
    y = model.normalizer.denorm_delta(out.reshape(model.n_horizon, N_JOINT))
    if not np.all(np.isfinite(y)):
        raise PredictionError("residual produced non-finite output")
    return y


def residual_jacobian(model: ResidualModel, window: HistoryWindow,
                      future_inputs: np.ndarray) -> np.ndarray:
    """Analytic d(residual)/d(U_{t:t+N-1}), shape (3N, 4N), physical units."""
    x = residual_input(model, window, future_inputs)
    _, pre = _kernels.mlp_eval(model.net.weights, model.net.biases, x)
    jac_norm = _kernels.mlp_input_jac(model.net.weights, pre)
    jac_u = jac_norm[:, (N_STATE + N_INPUT) * model.h:]
    row_scale = np.tile(model.normalizer.delta_scale, model.n_horizon)
    col_scale = np.tile(model.normalizer.input_scale, model.n_horizon)
    return jac_u * row_scale[:, None] / col_scale[None, :]


def hybrid_predict(offline: SsmpModel, online: ResidualModel,
                   window: HistoryWindow, future_inputs: np.ndarray) -> np.ndarray:
    """Offline prediction plus residual correction (exact sum)."""
    if offline.h != online.h or offline.n_horizon != online.n_horizon:
        raise ConfigError("offline and online models disagree on h or N")
    return predict(offline, window, future_inputs) + predict_residual(
        online, window, future_inputs)


# ---------------------------------------------------------------------------
# Mismatch buffer and online update
# ---------------------------------------------------------------------------

@dataclass
class MismatchBuffer:
    """Ring buffer of completed prediction/outcome pairs for online SGD."""

    capacity: int = 256
    entries: deque = field(default_factory=deque)

    def push(self, window: HistoryWindow, future_inputs: np.ndarray,
             offline_pred: np.ndarray, realized: np.ndarray) -> None:
        self.entries.append((window, np.array(future_inputs, dtype=np.float64),
                             np.array(offline_pred, dtype=np.float64),
                             np.array(realized, dtype=np.float64)))
        while len(self.entries) > self.capacity:
            self.entries.popleft()

    def clear(self) -> None:
        self.entries.clear()

    def __len__(self):
        return len(self.entries)

    def recent(self, n: int) -> list:
        """Most recent min(n, size) entries, chronological order."""
        n = min(n, len(self.entries))
        return list(self.entries)[len(self.entries) - n:]


@dataclass
class OnlineUpdateResult:
    losses: list = field(default_factory=list)
    rolled_back: bool = False
    n_samples: int = 0


def online_update(model: ResidualModel, buffer: MismatchBuffer,
                  loops: int) -> OnlineUpdateResult:
    """k2 full-pass SGD loops on M = ||(Y - X_hat) - X_hat_error||^2.

    The batch is the most recent min(B, size) buffer entries, fixed across
    loops, so the update is deterministic.  Weights step with eta_w, biases
    with eta_b.  A non-finite loss or parameter rolls the model back to its
    pre-update weights.
    """
    result = OnlineUpdateResult()
    batch = buffer.recent(model.batch_size)
    if not batch or loops < 1:
        return result
    result.n_samples = len(batch)

    xs = np.stack([residual_input(model, w, f) for (w, f, _, _) in batch])
    mismatch = np.stack([r - p for (_, _, p, r) in batch])  # (B, N, 3) rad
    # The regression runs in normalized delta units so the learning-rate
    # defaults are independent of the plant's motion scale.
    tgt = model.normalizer.norm_delta(mismatch).reshape(len(batch), -1)

    params = model.net.params()
    snapshot = [p.copy() for p in params]
    rates = [model.eta_w if i % 2 == 0 else model.eta_b
             for i in range(len(params))]

    for _ in range(loops):
        out, pre = mlp_batch_forward(model.net, xs)
        err = out - tgt
        loss = float(np.sum(err * err)) / len(batch)
        if not np.isfinite(loss):
            _restore(params, snapshot)
            result.rolled_back = True
            return result
        result.losses.append(loss)
        upstream = (2.0 / len(batch)) * err
        grads, _ = mlp_batch_backward(model.net, xs, pre, upstream)
        sgd_minibatch_step(params, grads, rates)
        if any(not np.all(np.isfinite(p)) for p in params):
            _restore(params, snapshot)
            result.rolled_back = True
            return result
    return result


def _restore(params: list, snapshot: list) -> None:
    for p, s in zip(params, snapshot):
        p[...] = s
