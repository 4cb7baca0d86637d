"""Single-shot multi-step predictor: an LSTM history encoder feeding an MLP
head that emits the whole N-step sequence of joint-angle changes at once.

The prediction is anchored at the previous measured angle:

    Y_hat[i] = denorm_delta(G(F(history), future_inputs))[i] + y_prev

so a zero network output predicts "no motion".  An ablation flag trains the
same architecture on absolute angles instead of changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .constants import N_INPUT, N_JOINT, N_STATE
from .dataset import EpisodeStore, HistoryWindow, Normalizer, WindowSet, build_windows
from .errors import ConfigError, ContractError, PredictionError, TrainingError
from .nn import (AdamState, LstmLayer, MlpNetwork, adam_step, lstm_backward,
                 lstm_batch_forward, mlp_batch_backward, mlp_batch_forward)

DEFAULT_LSTM_HIDDEN = 128
DEFAULT_HEAD_HIDDEN = (128, 128)


@dataclass
class SsmpModel:
    """Offline predictor: F (LSTM) + G (MLP head) + normalizer + dims."""

    lstm: LstmLayer
    head: MlpNetwork
    normalizer: Normalizer
    h: int
    n_horizon: int
    absolute_targets: bool = False  # ablation: predict absolute angles

    def __post_init__(self):
        j = self.lstm.hidden_size
        if self.lstm.input_size != N_STATE + N_INPUT:
            raise ConfigError("LSTM input size must be 13 (9 states + 4 inputs)")
        if self.head.input_dim != j + N_INPUT * self.n_horizon:
            raise ConfigError("head input dim must be lstm_hidden + 4*N")
        if self.head.output_dim != N_JOINT * self.n_horizon:
            raise ConfigError("head output dim must be 3*N")

    def params(self) -> list[np.ndarray]:
        return self.lstm.params() + self.head.params()

    def copy(self) -> "SsmpModel":
        return SsmpModel(lstm=self.lstm.copy(), head=self.head.copy(),
                         normalizer=self.normalizer, h=self.h,
                         n_horizon=self.n_horizon,
                         absolute_targets=self.absolute_targets)

    @classmethod
    def create(cls, h: int, n_horizon: int, normalizer: Normalizer,
               rng: np.random.Generator, lstm_hidden: int = DEFAULT_LSTM_HIDDEN,
               head_hidden: tuple = DEFAULT_HEAD_HIDDEN,
               absolute_targets: bool = False) -> "SsmpModel":
        lstm = LstmLayer.create(N_STATE + N_INPUT, lstm_hidden, rng)
        dims = [lstm_hidden + N_INPUT * n_horizon, *head_hidden, N_JOINT * n_horizon]
        head = MlpNetwork.create(dims, rng)
        return cls(lstm=lstm, head=head, normalizer=normalizer, h=h,
                   n_horizon=n_horizon, absolute_targets=absolute_targets)


# ---------------------------------------------------------------------------
# Normalization plumbing shared with the residual model
# ---------------------------------------------------------------------------

def normalized_history(model: SsmpModel, window: HistoryWindow) -> np.ndarray:
    """(h, 13) normalized [state, input] sequence for the LSTM."""
    if window.h != model.h:
        raise ConfigError(f"window has h={window.h}, model expects {model.h}")
    norm = model.normalizer
    return np.concatenate([norm.norm_states(window.states),
                           norm.norm_inputs(window.inputs)], axis=1)


def normalized_future(model: SsmpModel, future_inputs: np.ndarray) -> np.ndarray:
    """(4N,) flattened normalized future input sequence U_{t:t+N-1}."""
    fut = np.asarray(future_inputs, dtype=np.float64)
    if fut.shape != (model.n_horizon, N_INPUT):
        raise ConfigError(f"future inputs must be ({model.n_horizon}, {N_INPUT})")
    return model.normalizer.norm_inputs(fut).ravel()


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise PredictionError("non-finite value in predictor input")


def _abs_scale(norm: Normalizer) -> tuple[np.ndarray, np.ndarray]:
    """q-angle min/scale used by the absolute-target ablation."""
    lo = norm.state_min[:N_JOINT]
    sc = norm.state_max[:N_JOINT] - lo
    return lo, sc


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def predict(model: SsmpModel, window: HistoryWindow,
            future_inputs: np.ndarray) -> np.ndarray:
    """Predicted joint angles Y_hat_{t+1:t+N}, shape (N, 3)."""
    _check_finite(window.states, window.inputs, window.y_prev, future_inputs)
    seq = normalized_history(model, window)
    fut = normalized_future(model, future_inputs)
    h_fin = _kernels.lstm_final_hidden(model.lstm.wx, model.lstm.wh,
                                       model.lstm.b, seq)
    out, _ = _kernels.mlp_eval(model.head.weights, model.head.biases,
                               np.concatenate([h_fin, fut]))
    y = _finish(model, window, out)
    if not np.all(np.isfinite(y)):
        raise PredictionError("predictor produced non-finite output")
    return y


def _finish(model: SsmpModel, window: HistoryWindow, out: np.ndarray) -> np.ndarray:
    grid = out.reshape(model.n_horizon, N_JOINT)
    if model.absolute_targets:
        lo, sc = _abs_scale(model.normalizer)
        return grid * sc + lo
    return model.normalizer.denorm_delta(grid) + window.y_prev


def predict_batch(model: SsmpModel, hist_states: np.ndarray,
                  hist_inputs: np.ndarray, anchors: np.ndarray,
                  future_inputs: np.ndarray) -> np.ndarray:
    """Vectorized predict over W windows; returns (W, N, 3) joint angles."""
    norm = model.normalizer
    seqs = np.concatenate([norm.norm_states(hist_states),
                           norm.norm_inputs(hist_inputs)], axis=2)
    fut = norm.norm_inputs(future_inputs).reshape(len(seqs), -1)
    h_fin, _ = lstm_batch_forward(model.lstm, seqs)
    out, _ = mlp_batch_forward(model.head, np.concatenate([h_fin, fut], axis=1))
    grid = out.reshape(-1, model.n_horizon, N_JOINT)
    if model.absolute_targets:
        lo, sc = _abs_scale(norm)
        return grid * sc + lo
    return norm.denorm_delta(grid) + anchors[:, None, :]


def predict_jacobian(model: SsmpModel, window: HistoryWindow,
                     future_inputs: np.ndarray) -> np.ndarray:
    """Analytic d(Y_hat)/d(U_{t:t+N-1}), shape (3N, 4N), physical units.

    The chain runs through G only; the LSTM encoding depends on history
    alone, so it is constant with respect to the future inputs.
    """
    _check_finite(window.states, window.inputs, window.y_prev, future_inputs)
    seq = normalized_history(model, window)
    fut = normalized_future(model, future_inputs)
    h_fin = _kernels.lstm_final_hidden(model.lstm.wx, model.lstm.wh,
                                       model.lstm.b, seq)
    _, pre = _kernels.mlp_eval(model.head.weights, model.head.biases,
                               np.concatenate([h_fin, fut]))
    jac_norm = _kernels.mlp_input_jac(model.head.weights, pre)
    jac_u = jac_norm[:, model.lstm.hidden_size:]
    if model.absolute_targets:
        _, sc = _abs_scale(model.normalizer)
        row_scale = np.tile(sc, model.n_horizon)
    else:
        row_scale = np.tile(model.normalizer.delta_scale, model.n_horizon)
    col_scale = np.tile(model.normalizer.input_scale, model.n_horizon)
    return jac_u * row_scale[:, None] / col_scale[None, :]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    """Loss trace plus validation summary from ``train_offline``."""

    trace: list = field(default_factory=list)  # (iteration, batch loss)
    val_loss: float = float("nan")
    initial_val_loss: float = float("nan")
    n_train_windows: int = 0
    n_val_windows: int = 0
    n_skipped: int = 0


def _window_tensors(model: SsmpModel, windows: WindowSet):
    """Pre-normalized (seq, flat future, flat target) training tensors."""
    norm = model.normalizer
    seqs = np.concatenate([norm.norm_states(windows.hist_states),
                           norm.norm_inputs(windows.hist_inputs)], axis=2)
    fut = norm.norm_inputs(windows.future_inputs).reshape(len(windows), -1)
    if model.absolute_targets:
        lo, sc = _abs_scale(norm)
        absolute = windows.targets + windows.anchors[:, None, :]
        tgt = ((absolute - lo) / sc).reshape(len(windows), -1)
    else:
        tgt = norm.norm_delta(windows.targets).reshape(len(windows), -1)
    return seqs, fut, tgt


def _eval_loss(model: SsmpModel, seqs, fut, tgt, chunk: int = 4096) -> float:
    """Mean per-sample squared-error loss over a full window set."""
    if len(seqs) == 0:
        return float("nan")
    total = 0.0
    for lo in range(0, len(seqs), chunk):
        sl = slice(lo, lo + chunk)
        h_fin, _ = lstm_batch_forward(model.lstm, seqs[sl])
        out, _ = mlp_batch_forward(model.head,
                                   np.concatenate([h_fin, fut[sl]], axis=1))
        diff = out - tgt[sl]
        total += float(np.sum(diff * diff))
    return total / len(seqs)


def prediction_armse(model: SsmpModel, windows: WindowSet,
                     chunk: int = 4096) -> float:
    """Mean per-window horizon RMSE in physical units (joint angles).

    Each window contributes the RMSE between its N-step prediction and the
    realized positions; the average runs over every window in the set.
    """
    if len(windows) == 0:
        raise ContractError("prediction_armse needs at least one window")
    total = 0.0
    for lo in range(0, len(windows), chunk):
        sl = slice(lo, lo + chunk)
        pred = predict_batch(model, windows.hist_states[sl],
                             windows.hist_inputs[sl], windows.anchors[sl],
                             windows.future_inputs[sl])
        actual = windows.targets[sl] + windows.anchors[sl][:, None, :]
        mse = np.mean((pred - actual) ** 2, axis=(1, 2))
        total += float(np.sum(np.sqrt(mse)))
    return total / len(windows)


def split_store(store: EpisodeStore, val_fraction: float = 0.1):
    """Hold out the final fraction of episodes for validation."""
    n = len(store)
    n_val = int(np.floor(n * val_fraction))
    if n >= 2 and n_val == 0:
        n_val = 1
    train = EpisodeStore(episodes=list(store.episodes[:n - n_val]))
    val = EpisodeStore(episodes=list(store.episodes[n - n_val:]))
    return train, val


def train_offline(model: SsmpModel, store: EpisodeStore, iterations: int,
                  batch_size: int = 256, learning_rate: float = 1e-3,
                  seed: int = 0, log_every: int = 100,
                  val_fraction: float = 0.1) -> TrainResult:
    """Joint Adam training of F and G on squared error over normalized targets.

    The final ``val_fraction`` of episodes is held out; the loss trace records
    the training batch loss every ``log_every`` iterations.  Non-finite loss
    aborts with a diagnostic.
    """
    if iterations < 0 or batch_size < 1 or learning_rate <= 0:
        raise ConfigError("iterations >= 0, batch_size >= 1, learning_rate > 0 required")
    train_store, val_store = split_store(store, val_fraction)
    train_w = build_windows(train_store, model.h, model.n_horizon)
    val_w = build_windows(val_store, model.h, model.n_horizon)
    if len(train_w) == 0:
        raise TrainingError("no training windows: episodes shorter than h+N+1")

    seqs, fut, tgt = _window_tensors(model, train_w)
    vseqs, vfut, vtgt = (_window_tensors(model, val_w) if len(val_w)
                         else (np.zeros((0,)), None, None))

    result = TrainResult(n_train_windows=len(train_w), n_val_windows=len(val_w),
                         n_skipped=train_w.n_skipped + val_w.n_skipped)
    if len(val_w):
        result.initial_val_loss = _eval_loss(model, vseqs, vfut, vtgt)

    rng = np.random.default_rng(seed)
    params = model.params()
    opt = AdamState.for_params(params, learning_rate=learning_rate)
    n_windows = len(train_w)

    for it in range(iterations):
        idx = rng.integers(0, n_windows, size=batch_size)
        batch_seq = seqs[idx]
        batch_fut = fut[idx]
        batch_tgt = tgt[idx]

        h_fin, lstm_cache = lstm_batch_forward(model.lstm, batch_seq)
        g_in = np.concatenate([h_fin, batch_fut], axis=1)
        out, pre = mlp_batch_forward(model.head, g_in)
        diff = out - batch_tgt
        loss = float(np.sum(diff * diff)) / batch_size
        if not np.isfinite(loss):
            raise TrainingError(
                f"training diverged at iteration {it}: loss={loss}")
        if it % log_every == 0:
            result.trace.append((it, loss))

        upstream = (2.0 / batch_size) * diff
        g_grads, d_gin = mlp_batch_backward(model.head, g_in, pre, upstream)
        f_grads, _ = lstm_backward(model.lstm, lstm_cache,
                                   np.ascontiguousarray(d_gin[:, :model.lstm.hidden_size]))
        adam_step(opt, params, f_grads + g_grads)

    if iterations > 0:
        h_fin, _ = lstm_batch_forward(model.lstm, seqs[:min(n_windows, 4096)])
        out, _ = mlp_batch_forward(
            model.head, np.concatenate([h_fin, fut[:min(n_windows, 4096)]], axis=1))
        diff = out - tgt[:min(n_windows, 4096)]
        result.trace.append((iterations, float(np.sum(diff * diff)) / len(diff)))
    if len(val_w):
        result.val_loss = _eval_loss(model, vseqs, vfut, vtgt)
    return result
