"""Optimizers operating in place on lists of parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray], learning_rate: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps,
                   m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def _check_finite(grads: list[np.ndarray]) -> None:
    for idx, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            bad = np.argwhere(~np.isfinite(g))[0]
            raise TrainingError(f"non-finite gradient in array {idx} at index {tuple(bad)}")


def adam_step(state: AdamState, params: list[np.ndarray],
              grads: list[np.ndarray]) -> list[np.ndarray]:
    """One bias-corrected Adam update; mutates params in place and returns them."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise TrainingError("parameter/gradient/state length mismatch")
    _check_finite(grads)
    if all(not np.any(g) for g in grads):
        # A zero gradient must leave the parameters untouched regardless of
        # accumulated moments, so skip the step entirely.
        return params
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def sgd_minibatch_step(params: list[np.ndarray], avg_grads: list[np.ndarray],
                       learning_rate: float | list[float]) -> list[np.ndarray]:
    """Plain SGD: params <- params - lr * averaged_gradient, in place.

    ``learning_rate`` may be a list giving one rate per parameter array.
    """
    _check_finite(avg_grads)
    if isinstance(learning_rate, (int, float)):
        learning_rate = [float(learning_rate)] * len(params)
    for p, g, lr in zip(params, avg_grads, learning_rate):
        p -= lr * g
    return params
