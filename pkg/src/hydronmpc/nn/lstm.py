"""Single-layer LSTM with hand-written BPTT.

Gate weights are packed column-wise in the order [input, forget, output,
candidate]: the first ``3j`` columns pass through the logistic function,
the last ``j`` through tanh.  Only the final hidden state is exposed, so
the backward pass propagates a single upstream gradient through time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractError
from .mlp import glorot_uniform


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: one vectorized transcendental instead of exp + divide.
    return 0.5 * np.tanh(0.5 * x) + 0.5


@dataclass
class LstmLayer:
    """Packed-gate LSTM parameters.

    wx: (input_size, 4*hidden), wh: (hidden, 4*hidden), b: (4*hidden,)
    """

    wx: np.ndarray
    wh: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        j = self.wh.shape[0]
        if self.wx.shape[1] != 4 * j or self.wh.shape != (j, 4 * j) or self.b.shape != (4 * j,):
            raise ConfigError("LSTM gate matrices are dimensionally inconsistent")

    @property
    def hidden_size(self) -> int:
        return self.wh.shape[0]

    @property
    def input_size(self) -> int:
        return self.wx.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.wx, self.wh, self.b]

    def copy(self) -> "LstmLayer":
        return LstmLayer(self.wx.copy(), self.wh.copy(), self.b.copy())

    @classmethod
    def create(cls, input_size: int, hidden_size: int,
               rng: np.random.Generator) -> "LstmLayer":
        j = hidden_size
        fan_in = input_size + j
        wx = np.empty((input_size, 4 * j))
        wh = np.empty((j, 4 * j))
        for g in range(4):
            wx[:, g * j:(g + 1) * j] = glorot_uniform(rng, fan_in, j, shape=(input_size, j))
            wh[:, g * j:(g + 1) * j] = glorot_uniform(rng, fan_in, j, shape=(j, j))
        return cls(wx, wh, np.zeros(4 * j))


@dataclass
class LstmCache:
    """Stacked per-step activations for BPTT (leading axis is time)."""

    x: np.ndarray       # (T, in) or (T, B, in)
    gates: np.ndarray   # (T, ..., 4j) post-activation, packed [i, f, o, g]
    c: np.ndarray       # (T, ..., j) cell state after the step
    tc: np.ndarray      # tanh(c)
    h: np.ndarray       # hidden state after the step


def lstm_forward(layer: LstmLayer, sequence: np.ndarray) -> tuple[np.ndarray, LstmCache]:
    """Run the layer over a (T, input_size) sequence from zero initial state."""
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise ContractError("LSTM sequence must be a nonempty (T, input_size) array")
    if seq.shape[1] != layer.input_size:
        raise ConfigError(f"sequence feature dim {seq.shape[1]} != input_size {layer.input_size}")
    h, cache = _forward_impl(layer, seq)
    return h, cache


def lstm_batch_forward(layer: LstmLayer, sequences: np.ndarray) -> tuple[np.ndarray, LstmCache]:
    """Batched forward over a (B, T, input_size) array; returns (B, j) final hidden."""
    seq = np.ascontiguousarray(np.swapaxes(sequences, 0, 1))  # (T, B, in)
    if seq.shape[0] == 0:
        raise ContractError("LSTM sequence must be nonempty")
    return _forward_impl(layer, seq)


def _forward_impl(layer: LstmLayer, x: np.ndarray) -> tuple[np.ndarray, LstmCache]:
    j = layer.hidden_size
    T = x.shape[0]
    lead = x.shape[1:-1]
    gates = np.empty((T,) + lead + (4 * j,))
    cs = np.empty((T,) + lead + (j,))
    tcs = np.empty((T,) + lead + (j,))
    hs = np.empty((T,) + lead + (j,))
    h = np.zeros(lead + (j,))
    c = np.zeros(lead + (j,))
    # One big GEMM for the input projection instead of T small ones.
    x_proj = (x.reshape(-1, x.shape[-1]) @ layer.wx).reshape((T,) + lead + (4 * j,))
    x_proj += layer.b
    for t in range(T):
        z = x_proj[t] + h @ layer.wh
        z[..., :3 * j] = sigmoid(z[..., :3 * j])
        z[..., 3 * j:] = np.tanh(z[..., 3 * j:])
        i, f, o = z[..., :j], z[..., j:2 * j], z[..., 2 * j:3 * j]
        g = z[..., 3 * j:]
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[t] = z
        cs[t] = c
        tcs[t] = tc
        hs[t] = h
    return h, LstmCache(x=x, gates=gates, c=cs, tc=tcs, h=hs)


def lstm_backward(layer: LstmLayer, cache: LstmCache,
                  upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """BPTT from a gradient w.r.t. the final hidden state.

    Returns ([d_wx, d_wh, d_b], d_sequence); batched caches sum parameter
    gradients over the batch.
    """
    j = layer.hidden_size
    T = cache.x.shape[0]
    if cache.gates.shape[0] != T or cache.gates.shape[-1] != 4 * j:
        raise ContractError("cache does not match layer")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.h.shape[1:]:
        raise ContractError("upstream gradient shape mismatch")

    d_wh = np.zeros_like(layer.wh)
    dzs = np.empty_like(cache.gates)
    dh = upstream
    dc = np.zeros_like(upstream)
    batched = cache.x.ndim == 3
    for t in range(T - 1, -1, -1):
        z = cache.gates[t]
        i, f, o = z[..., :j], z[..., j:2 * j], z[..., 2 * j:3 * j]
        g = z[..., 3 * j:]
        tc = cache.tc[t]
        c_prev = cache.c[t - 1] if t > 0 else np.zeros_like(dc)
        h_prev = cache.h[t - 1] if t > 0 else np.zeros_like(dh)

        do = dh * tc
        dtc = dh * o * (1.0 - tc * tc) + dc
        di = dtc * g
        dg = dtc * i
        df = dtc * c_prev
        dc = dtc * f

        dz = np.concatenate([di * i * (1.0 - i),
                             df * f * (1.0 - f),
                             do * o * (1.0 - o),
                             dg * (1.0 - g * g)], axis=-1)
        dzs[t] = dz
        if batched:
            d_wh += h_prev.T @ dz
        else:
            d_wh += np.outer(h_prev, dz)
        dh = dz @ layer.wh.T
    # Input-side gradients batch into single GEMMs over all timesteps.
    flat_dz = dzs.reshape(-1, 4 * j)
    flat_x = cache.x.reshape(-1, cache.x.shape[-1])
    d_wx = flat_x.T @ flat_dz
    d_b = flat_dz.sum(axis=0)
    d_x = (flat_dz @ layer.wx.T).reshape(cache.x.shape)
    return [d_wx, d_wh, d_b], d_x
