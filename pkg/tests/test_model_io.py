"""Checkpoint round-trip and corruption tests."""

import numpy as np
import pytest

from hydronmpc.dataset import build_windows
from hydronmpc.errors import FormatError
from hydronmpc.model_io import load_model, save_model
from hydronmpc.residual import ResidualModel, predict_residual
from hydronmpc.ssmp import predict

from test_ssmp import _small_model, _toy_store


def _trained_pair(seed=0):
    store = _toy_store(seed)
    model = _small_model(store, h=4, n_horizon=3, seed=seed)
    online = ResidualModel.create(4, 3, model.normalizer,
                                  np.random.default_rng(seed + 5),
                                  hidden=(24, 24), eta_w=0.004, eta_b=0.002,
                                  batch_size=17)
    rng = np.random.default_rng(9)
    for w in online.net.weights:
        w[:] = rng.normal(size=w.shape) * 0.05
    ws = build_windows(store, 4, 3)
    return model, online, ws


def test_roundtrip_bit_identical_predictions(tmp_path):
    model, _, ws = _trained_pair()
    path = str(tmp_path / "m.ssmp")
    save_model(path, model)
    back, residual = load_model(path)
    assert residual is None
    assert back.h == model.h and back.n_horizon == model.n_horizon
    win, fut, _ = ws.window_at(2)
    assert np.array_equal(predict(back, win, fut), predict(model, win, fut))


def test_roundtrip_with_residual_section(tmp_path):
    model, online, ws = _trained_pair(1)
    path = str(tmp_path / "m.ssmp")
    save_model(path, model, online)
    back, rback = load_model(path)
    assert rback is not None
    assert rback.eta_w == online.eta_w and rback.eta_b == online.eta_b
    assert rback.batch_size == online.batch_size
    win, fut, _ = ws.window_at(0)
    assert np.array_equal(predict_residual(rback, win, fut),
                          predict_residual(online, win, fut))


def test_roundtrip_preserves_ablation_flag(tmp_path):
    store = _toy_store(2)
    model = _small_model(store, h=4, n_horizon=3, absolute_targets=True)
    path = str(tmp_path / "m.ssmp")
    save_model(path, model)
    back, _ = load_model(path)
    assert back.absolute_targets is True


def test_corrupted_magic(tmp_path):
    model, _, _ = _trained_pair(3)
    path = str(tmp_path / "m.ssmp")
    save_model(path, model)
    data = bytearray(open(path, "rb").read())
    data[:5] = b"XXXXX"
    open(path, "wb").write(bytes(data))
    with pytest.raises(FormatError):
        load_model(path)


def test_truncated_payload(tmp_path):
    model, _, _ = _trained_pair(4)
    path = str(tmp_path / "m.ssmp")
    save_model(path, model)
    data = open(path, "rb").read()
    open(path, "wb").write(data[:len(data) - 16])
    with pytest.raises(FormatError):
        load_model(path)


def test_dims_payload_mismatch(tmp_path):
    model, _, _ = _trained_pair(5)
    path = str(tmp_path / "m.ssmp")
    save_model(path, model)
    data = bytearray(open(path, "rb").read())
    # Bump the declared LSTM hidden size so the payload no longer fits.
    import struct
    h_off = 5 + 4 * 5  # magic + (h, N, n, m, l)
    (j,) = struct.unpack_from("<I", data, h_off)
    struct.pack_into("<I", data, h_off, j + 8)
    open(path, "wb").write(bytes(data))
    with pytest.raises(FormatError):
        load_model(path)


def test_trailing_garbage(tmp_path):
    model, _, _ = _trained_pair(6)
    path = str(tmp_path / "m.ssmp")
    save_model(path, model)
    with open(path, "ab") as fh:
        fh.write(b"junkjunk")
    with pytest.raises(FormatError):
        load_model(path)


def test_bad_residual_magic(tmp_path):
    model, online, _ = _trained_pair(7)
    path = str(tmp_path / "m.ssmp")
    save_model(path, model, online)
    base_len = None
    save_model(str(path) + ".solo", model)
    base_len = len(open(str(path) + ".solo", "rb").read())
    data = bytearray(open(path, "rb").read())
    data[base_len:base_len + 6] = b"XXXXXX"
    open(path, "wb").write(bytes(data))
    with pytest.raises(FormatError):
        load_model(path)
