"""Fully connected encoder with explicit forward and backward passes.

Hidden layers use the rectifier, the output layer is linear, features come
back unnormalized. Weights are drawn from a zero-mean Gaussian with
variance 2/fan_in; biases start at zero. backward() consumes the exact
cache produced by forward() and returns gradients for every parameter and
for the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CacheMismatchError, DimensionMismatchError, InvalidShapeError
from .linalg import as_f64


class MlpEncoder:
    """Plain container for layer weights (out, in) and biases (out,)."""

    def __init__(self, weights, biases):
        self.weights = [as_f64(w).copy() for w in weights]
        self.biases = [as_f64(b).copy() for b in biases]
        if len(self.weights) != len(self.biases):
            raise InvalidShapeError("weights and biases count differ")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise InvalidShapeError(f"layer shapes {w.shape} / {b.shape} invalid")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise InvalidShapeError("consecutive layer dims do not chain")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return tuple([self.weights[0].shape[1]] + [w.shape[0] for w in self.weights])

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "MlpEncoder":
        return MlpEncoder(self.weights, self.biases)


@dataclass
class ForwardCache:
    layer_dims: tuple[int, ...]
    inputs: np.ndarray
    pre_activations: list
    activations: list


def init_encoder(layer_dims, rng: np.random.Generator) -> MlpEncoder:
    """He-style init: W ~ N(0, 2/fan_in), b = 0."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise InvalidShapeError(f"layer_dims {dims} must list >= 2 positive sizes")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return MlpEncoder(weights, biases)


def forward(encoder: MlpEncoder, inputs) -> tuple[np.ndarray, ForwardCache]:
    """Batch forward pass; returns (features (B, d_out), cache)."""
    x = as_f64(inputs)
    if x.ndim != 2:
        raise InvalidShapeError(f"inputs must be 2-d, got {x.shape}")
    if x.shape[1] != encoder.input_dim:
        raise DimensionMismatchError(
            f"input dim {x.shape[1]} != encoder input {encoder.input_dim}"
        )
    pre, act = [], []
    a = x
    last = len(encoder.weights) - 1
    for k, (w, b) in enumerate(zip(encoder.weights, encoder.biases)):
        z = a @ w.T + b
        pre.append(z)
        a = z if k == last else np.maximum(z, 0.0)
        act.append(a)
    return a, ForwardCache(encoder.layer_dims, x, pre, act)


def backward(encoder: MlpEncoder, cache: ForwardCache, grad_features):
    """Exact gradients for the cached forward pass.

    Returns (param_grads, grad_inputs) with param_grads a list of (dW, db)
    per layer. grad_features must match the cached batch.
    """
    if cache.layer_dims != encoder.layer_dims:
        raise CacheMismatchError(
            f"cache dims {cache.layer_dims} != encoder dims {encoder.layer_dims}"
        )
    g = as_f64(grad_features)
    batch = cache.inputs.shape[0]
    if g.shape != (batch, encoder.output_dim):
        raise CacheMismatchError(
            f"grad shape {g.shape} != ({batch}, {encoder.output_dim})"
        )
    if len(cache.pre_activations) != len(encoder.weights):
        raise CacheMismatchError("cache layer count != encoder layer count")
    param_grads = [None] * len(encoder.weights)
    for k in range(len(encoder.weights) - 1, -1, -1):
        below = cache.inputs if k == 0 else cache.activations[k - 1]
        if below.shape != (batch, encoder.weights[k].shape[1]):
            raise CacheMismatchError(f"cached activation {k} has wrong shape")
        param_grads[k] = (g.T @ below, g.sum(axis=0))
        g = g @ encoder.weights[k]
        if k > 0:
            g = g * (cache.pre_activations[k - 1] > 0.0)
    return param_grads, g
