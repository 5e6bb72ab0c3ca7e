"""Dense MLP core: forward pass, manual reverse-mode gradients, Adam, row views.

All parameters of a network live in one flat float64 vector.  Each layer
occupies a contiguous ``rows x cols`` block where row ``i`` holds neuron
``i``'s incoming weights followed by its bias (``cols == fan_in + 1``).
Rows are therefore the atomic unit that the evolutionary operators read
and overwrite: swapping a row between two networks transplants a whole
neuron.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, TrainingError

LEAKY_SLOPE = 0.01
ACTIVATIONS = ("leaky-relu",)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class LayerLayout(NamedTuple):
    rows: int    # fan_out of the layer
    cols: int    # fan_in + 1 (bias column at the end)
    offset: int  # start of the block inside the flat vector


@dataclass(frozen=True)
class MlpSpec:
    """Shape of a dense net: leaky ReLU between layers, identity at the output."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "leaky-relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise ConfigError(f"all layer widths must be positive, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def layer_sizes(self) -> tuple[tuple[int, int], ...]:
        """(fan_in, fan_out) for every affine layer, input to output."""
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return tuple(zip(dims[:-1], dims[1:]))

    def layouts(self) -> tuple[LayerLayout, ...]:
        out = []
        offset = 0
        for fan_in, fan_out in self.layer_sizes:
            out.append(LayerLayout(rows=fan_out, cols=fan_in + 1, offset=offset))
            offset += fan_out * (fan_in + 1)
        return tuple(out)

    @property
    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_sizes)


@dataclass
class ParamVector:
    """Flat float64 parameter store plus per-layer row structure."""

    values: np.ndarray
    layouts: tuple[LayerLayout, ...]

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        total = sum(l.rows * l.cols for l in self.layouts)
        if self.values.ndim != 1 or self.values.size != total:
            raise ConfigError(
                f"parameter vector has {self.values.size} entries, layout needs {total}"
            )

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layouts)

    def layer(self, index: int) -> np.ndarray:
        """View of layer ``index`` as a (rows, cols) matrix; writable."""
        lay = self._layout(index)
        return self.values[lay.offset:lay.offset + lay.rows * lay.cols].reshape(
            lay.rows, lay.cols
        )

    def weights_and_bias(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        block = self.layer(index)
        return block[:, :-1], block[:, -1]

    @property
    def n_layers(self) -> int:
        return len(self.layouts)

    @property
    def total_rows(self) -> int:
        return sum(l.rows for l in self.layouts)

    def _layout(self, index: int) -> LayerLayout:
        if not 0 <= index < len(self.layouts):
            raise ConfigError(f"layer index {index} out of range [0, {len(self.layouts)})")
        return self.layouts[index]


def row_views(params: ParamVector, layer_index: int) -> list[np.ndarray]:
    """Writable views of every row (weights + bias) of one layer."""
    block = params.layer(layer_index)
    return [block[i] for i in range(block.shape[0])]


def all_row_views(params: ParamVector) -> list[np.ndarray]:
    """Row views of every layer in layout order; together they partition the vector."""
    rows: list[np.ndarray] = []
    for i in range(params.n_layers):
        rows.extend(row_views(params, i))
    return rows


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParamVector:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    layouts = spec.layouts()
    values = np.zeros(spec.param_count)
    pv = ParamVector(values, layouts)
    for i, (fan_in, fan_out) in enumerate(spec.layer_sizes):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w, b = pv.weights_and_bias(i)
        w[:] = rng.uniform(-bound, bound, size=w.shape)
        b[:] = 0.0
    return pv


def zeros_params(spec: MlpSpec) -> ParamVector:
    return ParamVector(np.zeros(spec.param_count), spec.layouts())


def _check_params(spec: MlpSpec, params: ParamVector) -> None:
    if params.layouts != spec.layouts():
        raise ConfigError("parameter layout does not match the network spec")


def forward_batch(
    spec: MlpSpec, params: ParamVector, inputs: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batched forward pass.

    ``inputs`` is (n, input_dim).  Returns (outputs, cache) where the cache
    holds the input and every pre-activation, as needed by ``backward_batch``.
    """
    _check_params(spec, params)
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ConfigError(f"input shape {x.shape} does not match input_dim {spec.input_dim}")
    cache = [x]
    h = x
    n_layers = params.n_layers
    for i in range(n_layers):
        w, b = params.weights_and_bias(i)
        z = h @ w.T + b
        cache.append(z)
        if i < n_layers - 1:
            h = np.where(z > 0.0, z, LEAKY_SLOPE * z)
        else:
            h = z
    return h, cache


def mlp_forward(spec: MlpSpec, params: ParamVector, x: np.ndarray) -> np.ndarray:
    """Single-input forward pass; returns the output_dim logits."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != spec.input_dim:
        raise ConfigError(f"input length {x.size} does not match input_dim {spec.input_dim}")
    out, _ = forward_batch(spec, params, x[None, :])
    return out[0]


def backward_batch(
    spec: MlpSpec,
    params: ParamVector,
    cache: list[np.ndarray],
    upstream: np.ndarray,
) -> ParamVector:
    """Gradient of sum_n upstream[n] . output[n] with respect to all parameters."""
    _check_params(spec, params)
    upstream = np.asarray(upstream, dtype=np.float64)
    n_layers = params.n_layers
    if upstream.shape != cache[-1].shape:
        raise ConfigError(
            f"upstream shape {upstream.shape} does not match output shape {cache[-1].shape}"
        )
    grads = zeros_params(spec)
    dz = upstream
    for i in range(n_layers - 1, -1, -1):
        z_prev = cache[i]  # input for i == 0, pre-activation otherwise
        h_prev = z_prev if i == 0 else np.where(z_prev > 0.0, z_prev, LEAKY_SLOPE * z_prev)
        gw, gb = grads.weights_and_bias(i)
        gw[:] = dz.T @ h_prev
        gb[:] = dz.sum(axis=0)
        if i > 0:
            w, _ = params.weights_and_bias(i)
            dh = dz @ w
            dz = dh * np.where(z_prev > 0.0, 1.0, LEAKY_SLOPE)
    return grads


def mlp_backward(
    spec: MlpSpec, params: ParamVector, x: np.ndarray, upstream: np.ndarray
) -> ParamVector:
    """Gradient of upstream . output for one input, same layout as ``params``."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.ndim != 1 or upstream.size != spec.output_dim:
        raise ConfigError(
            f"upstream length {upstream.size} does not match output_dim {spec.output_dim}"
        )
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != spec.input_dim:
        raise ConfigError(f"input length {x.size} does not match input_dim {spec.input_dim}")
    _, cache = forward_batch(spec, params, x[None, :])
    return backward_batch(spec, params, cache, upstream[None, :])


@dataclass
class AdamState:
    """Moment estimates for one parameter vector; owned by exactly one trainer."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def fresh(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(
    params: ParamVector, grads: ParamVector, state: AdamState, lr: float
) -> tuple[ParamVector, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    if lr <= 0.0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if params.layouts != grads.layouts:
        raise ConfigError("gradient layout does not match parameter layout")
    g = grads.values
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise TrainingError(f"non-finite gradient at index {int(bad[0])}")
    t = state.step_count + 1
    m = ADAM_BETA1 * state.first_moment + (1.0 - ADAM_BETA1) * g
    v = ADAM_BETA2 * state.second_moment + (1.0 - ADAM_BETA2) * g * g
    m_hat = m / (1.0 - ADAM_BETA1 ** t)
    v_hat = v / (1.0 - ADAM_BETA2 ** t)
    new_values = params.values - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return ParamVector(new_values, params.layouts), AdamState(m, v, t)
