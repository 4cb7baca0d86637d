"""Dense feedforward networks with hand-written forward and backward passes.

Weights use the row-vector convention: a layer maps ``x`` to ``x @ W + b``
with ``W`` of shape ``(in_dim, out_dim)``.  Hidden activations are ReLU,
the output layer is linear.  All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ContractError


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(pre: np.ndarray) -> np.ndarray:
    # Derivative at exactly 0 is taken as 0.
    return (pre > 0.0).astype(np.float64)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple[int, ...] | None = None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


@dataclass
class MlpNetwork:
    """Plain MLP: ordered (weight, bias) pairs, ReLU hidden, identity output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ConfigError("weights and biases must pair up")
        if len(self.weights) < 2:
            raise ConfigError("MLP needs at least one hidden layer")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise ConfigError(
                    f"layer {i} output dim {self.weights[i].shape[1]} != "
                    f"layer {i + 1} input dim {self.weights[i + 1].shape[0]}")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ConfigError("bias shape must match layer output dim")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "MlpNetwork":
        return MlpNetwork([w.copy() for w in self.weights],
                          [b.copy() for b in self.biases])

    @classmethod
    def create(cls, dims: list[int], rng: np.random.Generator,
               weight_scale: float | None = None) -> "MlpNetwork":
        """Build an MLP with the given layer dims.

        Glorot-uniform weights by default; ``weight_scale`` switches to
        uniform(-scale, scale), used for small-start online models.
        """
        weights, biases = [], []
        for fi, fo in zip(dims[:-1], dims[1:]):
            if weight_scale is None:
                weights.append(glorot_uniform(rng, fi, fo))
            else:
                weights.append(rng.uniform(-weight_scale, weight_scale, size=(fi, fo)))
            biases.append(np.zeros(fo))
        return cls(weights, biases)


@dataclass
class MlpCache:
    """Forward-pass cache: the input plus every pre-activation."""

    x: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)


def mlp_forward(net: MlpNetwork, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    """Evaluate the network on a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ConfigError(f"input dim {x.shape} does not match net ({net.input_dim},)")
    cache = MlpCache(x=x)
    a = x
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        cache.pre.append(z)
        a = z if i == net.n_layers - 1 else relu(z)
    return a, cache


def mlp_backward(net: MlpNetwork, cache: MlpCache,
                 upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Backprop a gradient w.r.t. the output through the network.

    Returns (param_gradients, input_gradient); param gradients follow the
    same ordering as ``net.params()``.
    """
    if len(cache.pre) != net.n_layers or cache.x.shape != (net.input_dim,):
        raise ContractError("cache does not match network")
    for i, z in enumerate(cache.pre):
        if z.shape != (net.weights[i].shape[1],):
            raise ContractError("cache does not match network")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (net.output_dim,):
        raise ContractError("upstream gradient shape mismatch")

    grads: list[np.ndarray] = [None] * (2 * net.n_layers)
    delta = upstream
    for i in range(net.n_layers - 1, -1, -1):
        a_in = cache.x if i == 0 else relu(cache.pre[i - 1])
        grads[2 * i] = np.outer(a_in, delta)
        grads[2 * i + 1] = delta.copy()
        delta = net.weights[i] @ delta
        if i > 0:
            delta = delta * relu_grad(cache.pre[i - 1])
    return grads, delta


def mlp_input_jacobian(net: MlpNetwork, cache: MlpCache) -> np.ndarray:
    """Chain-rule Jacobian d(output)/d(input), shape (out_dim, in_dim)."""
    jac = net.weights[-1].T.copy()
    for i in range(net.n_layers - 2, -1, -1):
        jac = (jac * relu_grad(cache.pre[i])) @ net.weights[i].T
    return jac


def mlp_batch_forward(net: MlpNetwork, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Vectorized forward over a batch, rows are samples."""
    pre = []
    a = x
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if i == net.n_layers - 1 else relu(z)
    return a, pre


def mlp_batch_backward(net: MlpNetwork, x: np.ndarray, pre: list[np.ndarray],
                       upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Batched backprop; gradients are summed over the batch."""
    grads: list[np.ndarray] = [None] * (2 * net.n_layers)
    delta = upstream
    for i in range(net.n_layers - 1, -1, -1):
        a_in = x if i == 0 else relu(pre[i - 1])
        grads[2 * i] = a_in.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ net.weights[i].T
        if i > 0:
            delta = delta * relu_grad(pre[i - 1])
    return grads, delta
