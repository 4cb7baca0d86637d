"""Shared fixtures for the acceptance suite.

The trend criteria need real trained models on a ≥50k-step dataset, which
takes ~20 minutes of CPU.  Those artifacts build once into
``.acceptance_cache/`` at the repository root and are reused by later runs;
delete that directory to force a full rebuild.  The cache records the wall
time each model took to train so timing criteria can be checked without
retraining.
"""

from __future__ import annotations

import hashlib
import time
from pathlib import Path

import numpy as np
import pytest

from hydronmpc.dataset import (
    EpisodeStore,
    fit_normalizer,
    load_store,
    save_store,
)
from hydronmpc.model_io import load_model, save_model
from hydronmpc.plant import (
    PlantParams,
    Workspace,
    collect_closed_loop,
    collect_open_loop,
)
from hydronmpc.residual import ResidualModel
from hydronmpc.ssmp import SsmpModel, train_offline

CACHE_DIR = Path(__file__).resolve().parent.parent / ".acceptance_cache"

DATASET = dict(open_episodes=75, closed_episodes=75, steps=400, seed=42)

TRAINING = dict(iterations=50_000, batch_size=64, learning_rate=1e-3,
                lstm_hidden=64, head_hidden=(128, 128), seed=7)

# tag, history length h, horizon N, absolute-target ablation flag
MODEL_GRID = (
    ("h10n5", 10, 5, False),
    ("h10n10", 10, 10, False),
    ("h10n20", 10, 20, False),
    ("h20n10", 20, 10, False),
    ("h10n10_abs", 10, 10, True),
)


def cache_key() -> str:
    blob = repr((sorted(DATASET.items()), sorted(TRAINING.items()), MODEL_GRID))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_dataset() -> EpisodeStore:
    params, ws = PlantParams(), Workspace()
    store = EpisodeStore()
    for ep in collect_open_loop(params, ws, DATASET["open_episodes"],
                                DATASET["steps"], DATASET["seed"]).episodes:
        store.add(ep)
    for ep in collect_closed_loop(params, ws, DATASET["closed_episodes"],
                                  DATASET["steps"],
                                  DATASET["seed"] + 1).episodes:
        store.add(ep)
    return store


def _write_manifest(path: Path, entries: dict) -> None:
    lines = [f"{k} = {v}" for k, v in sorted(entries.items())]
    path.write_text("\n".join(lines) + "\n")


def _read_manifest(path: Path) -> dict:
    out = {}
    for line in path.read_text().splitlines():
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def ensure_cache() -> dict:
    """Build (or load) the dataset and the five trained checkpoints.

    Returns {"dir": Path, "dataset": Path, "models": {tag: Path},
             "train_seconds": {tag: float}, "total_steps": int}.
    """
    CACHE_DIR.mkdir(exist_ok=True)
    manifest_path = CACHE_DIR / "manifest.txt"
    models = {tag: CACHE_DIR / f"model_{tag}.bin" for tag, *_ in MODEL_GRID}
    complete = (manifest_path.is_file()
                and all(p.is_file() for p in models.values())
                and (CACHE_DIR / "dataset" / "manifest.txt").is_file())
    if complete:
        manifest = _read_manifest(manifest_path)
        if manifest.get("cache_key") == cache_key():
            return {
                "dir": CACHE_DIR,
                "dataset": CACHE_DIR / "dataset",
                "models": models,
                "train_seconds": {tag: float(manifest[f"train_seconds_{tag}"])
                                  for tag, *_ in MODEL_GRID},
                "total_steps": int(manifest["total_steps"]),
            }

    print(f"\n[cache] building acceptance artifacts under {CACHE_DIR}")
    store = build_dataset()
    save_store(str(CACHE_DIR / "dataset"), store)
    print(f"[cache] dataset: {len(store)} episodes, "
          f"{store.total_steps()} steps")
    norm = fit_normalizer(store)

    entries = {"cache_key": cache_key(), "total_steps": store.total_steps(),
               "n_episodes": len(store)}
    seconds = {}
    for tag, h, n_horizon, absolute in MODEL_GRID:
        model = SsmpModel.create(
            h, n_horizon, norm, np.random.default_rng(TRAINING["seed"]),
            lstm_hidden=TRAINING["lstm_hidden"],
            head_hidden=TRAINING["head_hidden"], absolute_targets=absolute)
        t0 = time.perf_counter()
        result = train_offline(model, store, TRAINING["iterations"],
                               batch_size=TRAINING["batch_size"],
                               learning_rate=TRAINING["learning_rate"],
                               seed=TRAINING["seed"])
        seconds[tag] = time.perf_counter() - t0
        residual = ResidualModel.create(
            h, n_horizon, norm, np.random.default_rng(TRAINING["seed"] + 1))
        save_model(str(models[tag]), model, residual)
        entries[f"train_seconds_{tag}"] = f"{seconds[tag]:.3f}"
        print(f"[cache] {tag}: val loss {result.initial_val_loss:.4f} -> "
              f"{result.val_loss:.5f} in {seconds[tag]:.0f}s")
    _write_manifest(manifest_path, entries)
    return {"dir": CACHE_DIR, "dataset": CACHE_DIR / "dataset",
            "models": models, "train_seconds": seconds,
            "total_steps": store.total_steps()}


@pytest.fixture(scope="session")
def acceptance_cache() -> dict:
    return ensure_cache()


@pytest.fixture(scope="session")
def canonical_store(acceptance_cache) -> EpisodeStore:
    return load_store(str(acceptance_cache["dataset"]))


@pytest.fixture(scope="session")
def canonical_models(acceptance_cache) -> dict:
    """{tag: (SsmpModel, ResidualModel)} for the five cached checkpoints."""
    return {tag: load_model(str(path))
            for tag, path in acceptance_cache["models"].items()}
