"""Binary checkpoint I/O.

Container layout (all little-endian):

  magic "SSMP1"
  uint32 x 8: h, N, n, m, l, lstm_hidden, n_head_hidden, flags (bit0 =
              absolute-target ablation)
  uint32 x n_head_hidden: head hidden sizes
  float64 arrays: normalizer (state_min, state_max, input_min, input_max,
                  delta_min, delta_max), then lstm wx, wh, b, then each head
                  layer's weight and bias in declaration order

An optional online-residual section may follow:

  magic "RESID1"
  uint32 x 3: n_hidden, batch_size, reserved
  uint32 x n_hidden: hidden sizes
  float64 x 2: eta_w, eta_b
  float64 arrays: each residual layer's weight and bias

Any magic/dims/payload disagreement or truncation raises FormatError.
"""

from __future__ import annotations

import struct

import numpy as np

from .constants import N_INPUT, N_JOINT, N_STATE
from .dataset import Normalizer
from .errors import FormatError
from .nn import LstmLayer, MlpNetwork
from .residual import ResidualModel
from .ssmp import SsmpModel

MAGIC_SSMP = b"SSMP1"
MAGIC_RESID = b"RESID1"


def _pack_arrays(arrays) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated checkpoint "
                              f"(needed {n} bytes at offset {self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int) -> tuple:
        return struct.unpack(f"<{count}I", self.take(4 * count))

    def f64(self, count: int) -> tuple:
        return struct.unpack(f"<{count}d", self.take(8 * count))

    def array(self, shape: tuple) -> np.ndarray:
        n = int(np.prod(shape))
        buf = self.take(8 * n)
        return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

    def remaining(self) -> int:
        return len(self.data) - self.pos


def save_model(path: str, model: SsmpModel,
               residual: ResidualModel | None = None) -> None:
    """Write an SSMP1 checkpoint, optionally with a RESID1 section."""
    head_hidden = [w.shape[1] for w in model.head.weights[:-1]]
    flags = 1 if model.absolute_targets else 0
    blob = bytearray()
    blob += MAGIC_SSMP
    blob += struct.pack("<8I", model.h, model.n_horizon, N_STATE, N_INPUT,
                        N_JOINT, model.lstm.hidden_size, len(head_hidden), flags)
    blob += struct.pack(f"<{len(head_hidden)}I", *head_hidden)
    blob += _pack_arrays(model.normalizer.arrays())
    blob += _pack_arrays(model.lstm.params())
    blob += _pack_arrays(model.head.params())
    if residual is not None:
        hidden = [w.shape[1] for w in residual.net.weights[:-1]]
        blob += MAGIC_RESID
        blob += struct.pack("<3I", len(hidden), residual.batch_size, 0)
        blob += struct.pack(f"<{len(hidden)}I", *hidden)
        blob += struct.pack("<2d", residual.eta_w, residual.eta_b)
        blob += _pack_arrays(residual.net.params())
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_model(path: str) -> tuple[SsmpModel, ResidualModel | None]:
    """Read a checkpoint written by ``save_model``."""
    with open(path, "rb") as fh:
        rd = _Reader(fh.read(), path)

    if rd.take(len(MAGIC_SSMP)) != MAGIC_SSMP:
        raise FormatError(f"{path}: bad magic, not an SSMP1 checkpoint")
    h, n_horizon, n, m, l, lstm_hidden, n_head_hidden, flags = rd.u32(8)
    if (n, m, l) != (N_STATE, N_INPUT, N_JOINT):
        raise FormatError(f"{path}: dims header ({n},{m},{l}) unsupported")
    if h < 1 or n_horizon < 1 or lstm_hidden < 1 or n_head_hidden < 1:
        raise FormatError(f"{path}: non-positive dims in header")
    head_hidden = list(rd.u32(n_head_hidden))

    norm_arrays = [rd.array((dim,)) for dim in (n, n, m, m, l, l)]
    normalizer = Normalizer(*norm_arrays)

    in_dim = n + m
    wx = rd.array((in_dim, 4 * lstm_hidden))
    wh = rd.array((lstm_hidden, 4 * lstm_hidden))
    b = rd.array((4 * lstm_hidden,))
    lstm = LstmLayer(wx, wh, b)

    dims = [lstm_hidden + m * n_horizon, *head_hidden, l * n_horizon]
    weights, biases = [], []
    for fi, fo in zip(dims[:-1], dims[1:]):
        weights.append(rd.array((fi, fo)))
        biases.append(rd.array((fo,)))
    head = MlpNetwork(weights, biases)
    model = SsmpModel(lstm=lstm, head=head, normalizer=normalizer, h=h,
                      n_horizon=n_horizon, absolute_targets=bool(flags & 1))

    residual = None
    if rd.remaining() > 0:
        if rd.take(len(MAGIC_RESID)) != MAGIC_RESID:
            raise FormatError(f"{path}: trailing bytes are not a RESID1 section")
        n_hidden, batch_size, _ = rd.u32(3)
        if n_hidden < 1:
            raise FormatError(f"{path}: non-positive residual depth")
        hidden = list(rd.u32(n_hidden))
        eta_w, eta_b = rd.f64(2)
        rdims = [(n + m) * h + m * n_horizon, *hidden, l * n_horizon]
        rweights, rbiases = [], []
        for fi, fo in zip(rdims[:-1], rdims[1:]):
            rweights.append(rd.array((fi, fo)))
            rbiases.append(rd.array((fo,)))
        residual = ResidualModel(net=MlpNetwork(rweights, rbiases),
                                 normalizer=normalizer, h=h,
                                 n_horizon=n_horizon, eta_w=eta_w,
                                 eta_b=eta_b, batch_size=batch_size)
    if rd.remaining() != 0:
        raise FormatError(f"{path}: {rd.remaining()} unexpected trailing bytes")
    return model, residual
