"""Episode storage, CSV I/O, sliding-window extraction, and normalization.

An episode is a contiguous 50 Hz time series of (state, input) samples.  The
predictor consumes windows of ``h`` past pairs plus ``N`` future inputs and is
trained on joint-angle *changes* relative to the anchor sample at t-1.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .constants import CSV_COLUMNS, DT, N_INPUT, N_JOINT, N_STATE
from .errors import ConfigError, FormatError

_FLOAT_FMT = "%.17g"  # lossless float64 round-trip, byte-stable output


@dataclass
class Episode:
    """One contiguous recording: states (T, 9) and inputs (T, 4) at DT."""

    states: np.ndarray
    inputs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[1] != N_STATE:
            raise ConfigError(f"episode states must be (T, {N_STATE})")
        if self.inputs.shape != (self.states.shape[0], N_INPUT):
            raise ConfigError("episode inputs must be (T, 4) matching states")

    def __len__(self):
        return self.states.shape[0]


@dataclass
class EpisodeStore:
    """A list of episodes; windows never straddle episode boundaries."""

    episodes: list = field(default_factory=list)

    def __len__(self):
        return len(self.episodes)

    def add(self, episode: Episode) -> None:
        self.episodes.append(episode)

    def total_steps(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    def all_states(self) -> np.ndarray:
        return np.concatenate([ep.states for ep in self.episodes], axis=0)

    def all_inputs(self) -> np.ndarray:
        return np.concatenate([ep.inputs for ep in self.episodes], axis=0)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def save_episode_csv(path: str, episode: Episode) -> None:
    """Write one episode as CSV with the documented column order."""
    t = np.arange(len(episode)) * DT
    table = np.column_stack([t, episode.states, episode.inputs])
    header = ",".join(CSV_COLUMNS)
    np.savetxt(path, table, fmt=_FLOAT_FMT, delimiter=",", header=header, comments="")


def load_episode_csv(path: str, meta: dict | None = None) -> Episode:
    """Read an episode CSV written by ``save_episode_csv``."""
    with open(path, "r") as fh:
        header = fh.readline().strip()
        if header != ",".join(CSV_COLUMNS):
            raise FormatError(f"unexpected episode CSV header in {path}")
        table = np.loadtxt(fh, delimiter=",", ndmin=2)
    if table.shape[1] != len(CSV_COLUMNS):
        raise FormatError(f"episode CSV {path} has {table.shape[1]} columns, "
                          f"expected {len(CSV_COLUMNS)}")
    states = table[:, 1:1 + N_STATE]
    inputs = table[:, 1 + N_STATE:1 + N_STATE + N_INPUT]
    return Episode(states=states, inputs=inputs, meta=dict(meta or {}))


def save_store(directory: str, store: EpisodeStore) -> None:
    """Write every episode plus a manifest listing filenames and metadata."""
    os.makedirs(directory, exist_ok=True)
    lines = ["# hydronmpc episode manifest"]
    for i, ep in enumerate(store.episodes):
        name = f"episode_{i:04d}.csv"
        save_episode_csv(os.path.join(directory, name), ep)
        parts = [name] + [f"{k}={ep.meta[k]}" for k in sorted(ep.meta)]
        lines.append(" ".join(parts))
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_store(directory: str) -> EpisodeStore:
    """Read a store written by ``save_store``."""
    manifest = os.path.join(directory, "manifest.txt")
    if not os.path.isfile(manifest):
        raise ConfigError(f"no manifest.txt in {directory}")
    store = EpisodeStore()
    with open(manifest, "r") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            name, kv = parts[0], parts[1:]
            meta = {}
            for item in kv:
                if "=" not in item:
                    raise FormatError(f"bad manifest entry: {line!r}")
                k, v = item.split("=", 1)
                meta[k] = v
            store.add(load_episode_csv(os.path.join(directory, name), meta))
    return store


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------

@dataclass
class HistoryWindow:
    """h past states X_t^h, h past inputs U_{t-1}^h, and the anchor Y_{t-1}."""

    states: np.ndarray   # (h, 9), chronological, ending at the current time t
    inputs: np.ndarray   # (h, 4), ending at t-1
    y_prev: np.ndarray   # (3,), joint angles at t-1

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.y_prev = np.asarray(self.y_prev, dtype=np.float64)
        h = self.states.shape[0]
        if self.states.shape != (h, N_STATE) or self.inputs.shape != (h, N_INPUT):
            raise ConfigError("history window shapes must be (h, 9) and (h, 4)")
        if self.y_prev.shape != (N_JOINT,):
            raise ConfigError("anchor must have 3 joint angles")

    @property
    def h(self) -> int:
        return self.states.shape[0]


@dataclass
class WindowSet:
    """Vectorized window storage for training: one row per window."""

    hist_states: np.ndarray    # (W, h, 9)
    hist_inputs: np.ndarray    # (W, h, 4)
    future_inputs: np.ndarray  # (W, N, 4)
    anchors: np.ndarray        # (W, 3) joint angles at t-1
    targets: np.ndarray        # (W, N, 3) = q_{t+1+i} - q_{t-1}
    n_skipped: int = 0         # episodes too short to yield any window

    def __len__(self):
        return self.hist_states.shape[0]

    def window_at(self, i: int) -> tuple:
        """Materialize window i as (HistoryWindow, future_inputs, target)."""
        win = HistoryWindow(states=self.hist_states[i], inputs=self.hist_inputs[i],
                            y_prev=self.anchors[i])
        return win, self.future_inputs[i], self.targets[i]


def build_windows(store: EpisodeStore, h: int, n_horizon: int) -> WindowSet:
    """Extract every valid (history, future, target) window from the store.

    A window anchored at time t uses states[t-h+1 .. t], inputs[t-h .. t-1],
    future inputs[t .. t+N-1], and targets q_{t+1+i} - q_{t-1}.  Episodes
    shorter than h + N + 1 samples yield no window and are counted in
    ``n_skipped``.
    """
    if h < 1 or n_horizon < 1:
        raise ConfigError("h and N must be >= 1")
    hs, hi, fu, an, tg = [], [], [], [], []
    skipped = 0
    for ep in store.episodes:
        t_len = len(ep)
        if t_len < h + n_horizon + 1:
            skipped += 1
            continue
        for t in range(h, t_len - n_horizon):
            hs.append(ep.states[t - h + 1:t + 1])
            hi.append(ep.inputs[t - h:t])
            fu.append(ep.inputs[t:t + n_horizon])
            an.append(ep.states[t - 1, :N_JOINT])
            tg.append(ep.states[t + 1:t + 1 + n_horizon, :N_JOINT]
                      - ep.states[t - 1, :N_JOINT])
    if not hs:
        return WindowSet(
            hist_states=np.zeros((0, h, N_STATE)),
            hist_inputs=np.zeros((0, h, N_INPUT)),
            future_inputs=np.zeros((0, n_horizon, N_INPUT)),
            anchors=np.zeros((0, N_JOINT)),
            targets=np.zeros((0, n_horizon, N_JOINT)),
            n_skipped=skipped,
        )
    return WindowSet(
        hist_states=np.stack(hs), hist_inputs=np.stack(hi),
        future_inputs=np.stack(fu), anchors=np.stack(an),
        targets=np.stack(tg), n_skipped=skipped,
    )


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

_PAD = 1e-6          # symmetric pad applied to constant dimensions
_MIN_RANGE = 1e-9    # below this a dimension counts as constant


def _pad_constant(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = lo.copy(), hi.copy()
    flat = (hi - lo) < _MIN_RANGE
    mid = 0.5 * (hi + lo)
    lo[flat] = mid[flat] - _PAD
    hi[flat] = mid[flat] + _PAD
    return lo, hi


@dataclass
class Normalizer:
    """Per-dimension min-max scaling for states, inputs, and output deltas.

    States and inputs map to [0, 1].  Output deltas are scaled by their range
    only (no offset), so a zero network output always denormalizes to a zero
    angle change — the anchor-preserving property the predictor relies on.
    """

    state_min: np.ndarray
    state_max: np.ndarray
    input_min: np.ndarray
    input_max: np.ndarray
    delta_min: np.ndarray
    delta_max: np.ndarray

    def __post_init__(self):
        for lo, hi, dim in ((self.state_min, self.state_max, N_STATE),
                            (self.input_min, self.input_max, N_INPUT),
                            (self.delta_min, self.delta_max, N_JOINT)):
            if lo.shape != (dim,) or hi.shape != (dim,):
                raise ConfigError("normalizer array shape mismatch")
            if not np.all(hi > lo):
                raise ConfigError("normalizer requires max > min per dimension")

    @property
    def input_scale(self) -> np.ndarray:
        return self.input_max - self.input_min

    @property
    def delta_scale(self) -> np.ndarray:
        return self.delta_max - self.delta_min

    def norm_states(self, x: np.ndarray) -> np.ndarray:
        return (x - self.state_min) / (self.state_max - self.state_min)

    def denorm_states(self, x: np.ndarray) -> np.ndarray:
        return x * (self.state_max - self.state_min) + self.state_min

    def norm_inputs(self, u: np.ndarray) -> np.ndarray:
        return (u - self.input_min) / self.input_scale

    def denorm_inputs(self, u: np.ndarray) -> np.ndarray:
        return u * self.input_scale + self.input_min

    def norm_delta(self, d: np.ndarray) -> np.ndarray:
        return d / self.delta_scale

    def denorm_delta(self, d: np.ndarray) -> np.ndarray:
        return d * self.delta_scale

    def arrays(self) -> list[np.ndarray]:
        """Arrays in serialization order."""
        return [self.state_min, self.state_max, self.input_min,
                self.input_max, self.delta_min, self.delta_max]


def fit_normalizer(store: EpisodeStore) -> Normalizer:
    """Per-dimension min/max over all samples; the delta range is fit on the
    two-step angle differences q_{t+1} - q_{t-1} (the shortest window target).
    """
    if len(store) == 0 or store.total_steps() == 0:
        raise ConfigError("cannot fit a normalizer on an empty store")
    states = store.all_states()
    inputs = store.all_inputs()
    deltas = [ep.states[2:, :N_JOINT] - ep.states[:-2, :N_JOINT]
              for ep in store.episodes if len(ep) > 2]
    all_deltas = (np.concatenate(deltas, axis=0) if deltas
                  else np.zeros((1, N_JOINT)))
    s_lo, s_hi = _pad_constant(states.min(axis=0), states.max(axis=0))
    i_lo, i_hi = _pad_constant(inputs.min(axis=0), inputs.max(axis=0))
    d_lo, d_hi = _pad_constant(all_deltas.min(axis=0), all_deltas.max(axis=0))
    return Normalizer(state_min=s_lo, state_max=s_hi, input_min=i_lo,
                      input_max=i_hi, delta_min=d_lo, delta_max=d_hi)
