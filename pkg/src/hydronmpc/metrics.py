"""Evaluation metrics: horizon RMSE, running ARMSE, energy efficiency,
and the analytic per-prediction operation-count estimate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


def rmse(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Root mean square error over the horizon: sqrt(||Y - Yhat||^2 / N)."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.shape[0] < 1:
        raise ContractError("rmse needs equal, nonempty sequences")
    n = y.shape[0]
    diff = y - y_hat
    return float(np.sqrt(np.sum(diff * diff) / n))


@dataclass
class ArmseTracker:
    """Streaming mean of per-cycle RMSE values."""

    total: float = 0.0
    count: int = 0

    def push(self, value: float) -> float:
        self.total += float(value)
        self.count += 1
        return self.value

    @property
    def value(self) -> float:
        if self.count == 0:
            raise ContractError("armse needs at least one sample")
        return self.total / self.count


def armse(rmse_history) -> float:
    """Batch average of a per-cycle RMSE history."""
    hist = np.asarray(rmse_history, dtype=np.float64)
    if hist.size < 1:
        raise ContractError("armse needs at least one sample")
    return float(hist.mean())


@dataclass
class EnergySeries:
    """E(t) along a trace, plus the pump-never-ran degenerate flag."""

    values: np.ndarray
    undefined: bool = False

    @property
    def final(self) -> float:
        return float(self.values[-1])


def energy_efficiency(supply: np.ndarray, overflow: np.ndarray,
                      dt: float) -> EnergySeries:
    """E(t) = 1 - integral(overflow) / integral(supply), trapezoidal.

    A zero supply integral (pump never ran) leaves E undefined; it is
    reported as 1 with the flag set.
    """
    supply = np.asarray(supply, dtype=np.float64)
    overflow = np.asarray(overflow, dtype=np.float64)
    if supply.shape != overflow.shape or supply.ndim != 1 or supply.size < 1:
        raise ContractError("supply/overflow series must be equal 1-D arrays")
    num = _trapezoid_running(overflow, dt)
    den = _trapezoid_running(supply, dt)
    undefined = den[-1] == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(den > 0.0, 1.0 - num / np.where(den > 0, den, 1.0),
                          1.0)
    return EnergySeries(values=values, undefined=bool(undefined))


def _trapezoid_running(series: np.ndarray, dt: float) -> np.ndarray:
    """Running trapezoidal integral, starting at 0 for the first sample."""
    out = np.zeros_like(series)
    if series.size > 1:
        out[1:] = np.cumsum(0.5 * (series[1:] + series[:-1]) * dt)
    return out


def flops_estimate(h: int, n: int, m: int, j: int, n_horizon: int) -> int:
    """Per-prediction operation count of the LSTM encoder plus MLP head."""
    if min(h, n, m, j, n_horizon) <= 0:
        raise ContractError("flops_estimate needs positive arguments")
    return 4 * j * h * (n + j + 3) + (h * n + 2 * m + 3 * j
                                      + 2 * n_horizon + 6) * j
