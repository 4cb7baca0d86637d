"""Pure numpy implementations of the control-path hot kernels.

The compiled extension (``_core``) mirrors this module exactly; either can
serve the predictor and the NMPC loop.
"""

from __future__ import annotations

import numpy as np


def lstm_final_hidden(wx: np.ndarray, wh: np.ndarray, b: np.ndarray,
                      seq: np.ndarray) -> np.ndarray:
    """Final hidden state of a packed-gate LSTM over a (T, in) sequence."""
    j = wh.shape[0]
    h = np.zeros(j)
    c = np.zeros(j)
    for t in range(seq.shape[0]):
        z = seq[t] @ wx + h @ wh + b
        z[:3 * j] = 0.5 * np.tanh(0.5 * z[:3 * j]) + 0.5
        z[3 * j:] = np.tanh(z[3 * j:])
        c = z[j:2 * j] * c + z[:j] * z[3 * j:]
        h = z[2 * j:3 * j] * np.tanh(c)
    return h


def mlp_eval(weights: list[np.ndarray], biases: list[np.ndarray],
             x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """MLP forward (ReLU hidden, linear output); returns output and pre-activations."""
    pre = []
    a = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
    return a, pre


def mlp_input_jac(weights: list[np.ndarray], pre: list[np.ndarray]) -> np.ndarray:
    """Chain-rule d(output)/d(input) for an MLP evaluated with ``mlp_eval``."""
    jac = weights[-1].T.copy()
    for i in range(len(weights) - 2, -1, -1):
        jac = (jac * (pre[i] > 0.0)) @ weights[i].T
    return jac
