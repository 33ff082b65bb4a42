"""MLP networks for the generator, encoder, discriminators, critic and classifier."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tape, Tensor

HIDDEN_ACTIVATIONS = ("relu", "leaky_relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "tanh", "sigmoid")
INITS = ("normal", "uniform")
LEAKY_SLOPE = 0.2


class Role(str, Enum):
    GENERATOR = "generator"
    ENCODER = "encoder"
    DISCRIMINATOR = "discriminator"
    CODE_DISCRIMINATOR = "code_discriminator"
    CRITIC = "critic"
    CLASSIFIER = "classifier"


@dataclass(frozen=True)
class MLPSpec:
    """Layer sizes (input first, output last) plus activation and init choices.

    ``init_scale`` is the standard deviation for ``normal`` init and the
    half-width for ``uniform`` init.
    """

    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "identity"
    init: str = "normal"
    init_scale: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output size")
        if any(s <= 0 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive: {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}")
        if not self.init_scale >= 0:
            raise ValueError("init_scale must be non-negative")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]


@dataclass(frozen=True)
class NetworkParams:
    role: Role
    spec: MLPSpec
    weights: tuple[Tensor, ...]
    biases: tuple[Tensor, ...]
    noise_dim: int = field(default=0)

    def __post_init__(self):
        sizes = self.spec.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ShapeError("number of layers does not match spec")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ShapeError(
                    f"layer {i}: weight {w.shape} / bias {b.shape} do not chain with {sizes}"
                )

    def tensors(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> NetworkParams:
        ts = [Tensor._wrap(np.asarray(a, dtype=np.float64)) for a in arrays]
        return NetworkParams(self.role, self.spec, tuple(ts[0::2]), tuple(ts[1::2]), self.noise_dim)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vector: np.ndarray) -> NetworkParams:
        """Copy whose tensors are views into ``vector`` (which must not be mutated afterwards)."""
        arrays, start = [], 0
        for a in self.arrays():
            arrays.append(vector[start : start + a.size].reshape(a.shape))
            start += a.size
        if start != vector.size:
            raise ShapeError(f"flat vector has {vector.size} values, network has {start}")
        return self.with_arrays(arrays)

    def attach(self, tape: Tape) -> NetworkParams:
        """Copy whose tensors are watched on ``tape``."""
        ts = [tape.watch(t) for t in self.tensors()]
        return NetworkParams(self.role, self.spec, tuple(ts[0::2]), tuple(ts[1::2]), self.noise_dim)

    def grads(self) -> list[np.ndarray]:
        return [t.grad for t in self.tensors()]

    def arrays(self) -> list[np.ndarray]:
        return [t.data for t in self.tensors()]

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def num_parameters(self) -> int:
        return int(np.sum([t.size for t in self.tensors()]))


def init_params(spec: MLPSpec, seed: int, role: Role | str = Role.GENERATOR, noise_dim: int = 0) -> NetworkParams:
    """Weights drawn per ``spec.init`` from a generator seeded with ``seed``; zero biases."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    sizes = spec.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if spec.init == "normal":
            w = rng.normal(0.0, spec.init_scale, size=(fan_in, fan_out))
        else:
            w = rng.uniform(-spec.init_scale, spec.init_scale, size=(fan_in, fan_out))
        weights.append(Tensor._wrap(w))
        biases.append(Tensor._wrap(np.zeros(fan_out)))
    return NetworkParams(Role(role), spec, tuple(weights), tuple(biases), noise_dim)


def _activate(x: Tensor, name: str) -> Tensor:
    if name == "relu":
        return ad.relu(x)
    if name == "leaky_relu":
        return ad.leaky_relu(x, LEAKY_SLOPE)
    if name == "tanh":
        return ad.tanh(x)
    if name == "sigmoid":
        return ad.sigmoid(x)
    return x


def _check_input(params: NetworkParams, x: Tensor, width: int | None = None) -> None:
    width = params.spec.input_dim if width is None else width
    if x.data.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{params.role.value}: expected input [batch, {width}], got {x.shape}")


def mlp_forward(params: NetworkParams, x) -> Tensor:
    x = ad.as_tensor(x)
    _check_input(params, x)
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.linear(h, w, b)
        h = _activate(h, params.spec.output_activation if i == last else params.spec.hidden_activation)
    return h


def generator_forward(params: NetworkParams, z) -> Tensor:
    return mlp_forward(params, z)


def encoder_forward(params: NetworkParams, x, eps=None, project: bool = False) -> Tensor:
    """Encode ``x`` (with injected noise ``eps`` when the encoder has noise inputs).

    ``project=True`` maps each code onto the unit ball, as used with the AGE prior.
    """
    x = ad.as_tensor(x)
    _check_input(params, x, params.spec.input_dim - params.noise_dim)
    if params.noise_dim:
        if eps is None:
            raise ValueError(f"encoder expects noise of width {params.noise_dim}")
        eps = ad.as_tensor(eps)
        if eps.shape != (x.shape[0], params.noise_dim):
            raise ShapeError(f"encoder: noise shape {eps.shape} does not match input {x.shape}")
        x = ad.concat([x, eps], axis=1)
    z = mlp_forward(params, x)
    return ad.project_unit_ball(z) if project else z


def discriminator_forward(params: NetworkParams, x) -> Tensor:
    """Raw logits, one per row; the probability is ``sigmoid(logit)``."""
    return mlp_forward(params, x)


def code_discriminator_forward(params: NetworkParams, z) -> Tensor:
    return mlp_forward(params, z)


def critic_forward(params: NetworkParams, x) -> Tensor:
    return mlp_forward(params, x)


def input_gradient(params: NetworkParams, x) -> Tensor:
    """Gradient of a scalar-output MLP with respect to its input rows.

    The result is itself a differentiable expression of the network
    parameters, so penalties on it can be backpropagated. Piecewise-linear
    activations contribute constant slope masks; tanh and sigmoid
    contribute their (differentiable) derivatives.
    """
    x = ad.as_tensor(x)
    _check_input(params, x)
    if params.spec.output_dim != 1:
        raise ShapeError("input_gradient needs a scalar-output network")
    slopes = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        pre = ad.linear(h, w, b)
        name = params.spec.output_activation if i == last else params.spec.hidden_activation
        h = _activate(pre, name)
        if name == "relu":
            slopes.append(Tensor._wrap((pre.data > 0).astype(np.float64)))
        elif name == "leaky_relu":
            slopes.append(Tensor._wrap(np.where(pre.data > 0, 1.0, LEAKY_SLOPE)))
        elif name == "tanh":
            slopes.append(1.0 - ad.mul(h, h))
        elif name == "sigmoid":
            slopes.append(ad.mul(h, 1.0 - h))
        else:
            slopes.append(None)
    g = None
    for w, slope in zip(reversed(params.weights), reversed(slopes)):
        if g is None:
            g = slope if slope is not None else Tensor._wrap(np.ones((x.shape[0], 1)))
        elif slope is not None:
            g = ad.mul(g, slope)
        g = ad.matmul(g, ad.transpose(w))
    return g
