"""Tests for episode storage, CSV I/O, windowing, and normalization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydronmpc.constants import N_INPUT, N_STATE
from hydronmpc.dataset import (
    Episode,
    EpisodeStore,
    HistoryWindow,
    Normalizer,
    build_windows,
    fit_normalizer,
    load_episode_csv,
    load_store,
    save_episode_csv,
    save_store,
)
from hydronmpc.errors import ConfigError, FormatError


def _episode(rng, length, meta=None):
    return Episode(states=rng.normal(size=(length, N_STATE)),
                   inputs=rng.normal(size=(length, N_INPUT)),
                   meta=meta or {})


def _ramp_episode(length):
    """q(t) = 0.01 t on every joint; velocities/accelerations zero."""
    states = np.zeros((length, N_STATE))
    states[:, :3] = 0.01 * np.arange(length)[:, None]
    return Episode(states=states, inputs=np.zeros((length, N_INPUT)))


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------

def test_constant_episode_zero_targets():
    states = np.tile(np.arange(N_STATE, dtype=float), (30, 1))
    store = EpisodeStore([Episode(states=states, inputs=np.ones((30, N_INPUT)))])
    ws = build_windows(store, h=4, n_horizon=3)
    assert len(ws) == 30 - 4 - 3
    assert np.all(ws.targets == 0.0)


def test_minimum_length_episode_one_window():
    rng = np.random.default_rng(0)
    h, n = 5, 4
    store = EpisodeStore([_episode(rng, h + n + 1)])
    ws = build_windows(store, h, n)
    assert len(ws) == 1
    assert ws.n_skipped == 0


def test_short_episode_skipped_with_count():
    rng = np.random.default_rng(1)
    store = EpisodeStore([_episode(rng, 5), _episode(rng, 40)])
    ws = build_windows(store, h=4, n_horizon=3)
    assert ws.n_skipped == 1
    assert len(ws) == 40 - 4 - 3


def test_ramp_targets():
    store = EpisodeStore([_ramp_episode(5)])
    ws = build_windows(store, h=2, n_horizon=2)
    assert len(ws) == 1
    # anchor q_1 = 0.01; targets q_3 - q_1 = 0.02, q_4 - q_1 = 0.03
    assert np.allclose(ws.targets[0, :, 0], [0.02, 0.03])
    assert np.allclose(ws.anchors[0], 0.01)


def test_window_slices_are_chronological():
    rng = np.random.default_rng(2)
    ep = _episode(rng, 25)
    store = EpisodeStore([ep])
    h, n = 6, 4
    ws = build_windows(store, h, n)
    # First window anchors at t = h.
    t = h
    assert np.array_equal(ws.hist_states[0], ep.states[t - h + 1:t + 1])
    assert np.array_equal(ws.hist_inputs[0], ep.inputs[t - h:t])
    assert np.array_equal(ws.future_inputs[0], ep.inputs[t:t + n])
    assert np.array_equal(ws.anchors[0], ep.states[t - 1, :3])


def test_targets_are_exact_deltas():
    rng = np.random.default_rng(3)
    ep = _episode(rng, 40)
    ws = build_windows(EpisodeStore([ep]), h=5, n_horizon=6)
    for w in range(len(ws)):
        t = 5 + w
        for i in range(6):
            expect = ep.states[t + 1 + i, :3] - ep.states[t - 1, :3]
            assert np.array_equal(ws.targets[w, i], expect)


def test_windows_do_not_straddle_episodes():
    rng = np.random.default_rng(4)
    store = EpisodeStore([_episode(rng, 15), _episode(rng, 15)])
    ws = build_windows(store, h=4, n_horizon=3)
    assert len(ws) == 2 * (15 - 4 - 3)


def test_window_at_roundtrip():
    rng = np.random.default_rng(5)
    ws = build_windows(EpisodeStore([_episode(rng, 20)]), h=3, n_horizon=2)
    win, fut, tgt = ws.window_at(1)
    assert isinstance(win, HistoryWindow)
    assert win.h == 3
    assert fut.shape == (2, N_INPUT)
    assert tgt.shape == (2, 3)


# ---------------------------------------------------------------------------
# Normalizer
# ---------------------------------------------------------------------------

def test_constant_dimension_pad():
    states = np.full((10, N_STATE), 5.0)
    store = EpisodeStore([Episode(states=states, inputs=np.zeros((10, N_INPUT)))])
    norm = fit_normalizer(store)
    assert np.allclose(norm.state_min, 5.0 - 1e-6)
    assert np.allclose(norm.state_max, 5.0 + 1e-6)


def test_normalizer_endpoints_and_midpoint():
    states = np.zeros((3, N_STATE))
    states[0, 0], states[1, 0], states[2, 0] = 0.0, 5.0, 10.0
    states[:, 1] = [2.0, 4.0, 6.0]
    store = EpisodeStore([Episode(states=states, inputs=np.zeros((3, N_INPUT)))])
    norm = fit_normalizer(store)
    scaled = norm.norm_states(states)
    assert scaled[0, 0] == 0.0 and scaled[2, 0] == 1.0
    assert scaled[1, 1] == 0.5


def test_empty_store_raises():
    with pytest.raises(ConfigError):
        fit_normalizer(EpisodeStore())


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_normalizer_roundtrip(seed):
    rng = np.random.default_rng(seed)
    store = EpisodeStore([_episode(rng, 30)])
    norm = fit_normalizer(store)
    x = rng.normal(size=(7, N_STATE))
    u = rng.normal(size=(7, N_INPUT))
    d = rng.normal(size=(7, 3)) * 0.05
    assert np.max(np.abs(norm.denorm_states(norm.norm_states(x)) - x)) < 1e-12
    assert np.max(np.abs(norm.denorm_inputs(norm.norm_inputs(u)) - u)) < 1e-12
    assert np.max(np.abs(norm.denorm_delta(norm.norm_delta(d)) - d)) < 1e-12


def test_delta_normalization_preserves_zero():
    rng = np.random.default_rng(8)
    norm = fit_normalizer(EpisodeStore([_episode(rng, 30)]))
    assert np.array_equal(norm.denorm_delta(np.zeros(3)), np.zeros(3))


def test_normalizer_rejects_bad_ranges():
    ones = np.ones(N_STATE)
    with pytest.raises(ConfigError):
        Normalizer(state_min=ones, state_max=ones, input_min=np.zeros(4),
                   input_max=np.ones(4), delta_min=np.zeros(3),
                   delta_max=np.ones(3))


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def test_episode_csv_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(6)
    ep = _episode(rng, 17)
    path = str(tmp_path / "ep.csv")
    save_episode_csv(path, ep)
    back = load_episode_csv(path)
    assert np.array_equal(back.states, ep.states)
    assert np.array_equal(back.inputs, ep.inputs)


def test_episode_csv_bad_header(tmp_path):
    path = str(tmp_path / "bad.csv")
    with open(path, "w") as fh:
        fh.write("a,b,c\n1,2,3\n")
    with pytest.raises(FormatError):
        load_episode_csv(path)


def test_store_roundtrip_with_meta(tmp_path):
    rng = np.random.default_rng(7)
    store = EpisodeStore([
        _episode(rng, 12, meta={"mode": "open_loop", "seed": "11", "load": "0"}),
        _episode(rng, 9, meta={"mode": "closed_loop", "seed": "12", "load": "2.5"}),
    ])
    save_store(str(tmp_path / "data"), store)
    back = load_store(str(tmp_path / "data"))
    assert len(back) == 2
    for a, b in zip(store.episodes, back.episodes):
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.inputs, b.inputs)
        assert a.meta == b.meta


def test_store_csv_bytes_deterministic(tmp_path):
    rng1 = np.random.default_rng(9)
    rng2 = np.random.default_rng(9)
    for sub, rng in (("a", rng1), ("b", rng2)):
        save_store(str(tmp_path / sub), EpisodeStore([_episode(rng, 20)]))
    a = (tmp_path / "a" / "episode_0000.csv").read_bytes()
    b = (tmp_path / "b" / "episode_0000.csv").read_bytes()
    assert a == b


def test_load_store_missing_manifest(tmp_path):
    with pytest.raises(ConfigError):
        load_store(str(tmp_path))
