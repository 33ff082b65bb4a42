"""Adam with bias correction, one instance per network."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .networks import NetworkParams


class NumericalError(FloatingPointError):
    """Non-finite gradients or losses during training."""

    def __init__(self, message: str, network: str | None = None, iteration: int | None = None):
        super().__init__(message)
        self.network = network
        self.iteration = iteration


class Adam:
    """Moment estimates for every parameter of one network, kept as flat vectors.

    Defaults follow the GAN setting ``beta1=0.5, beta2=0.9``.
    """

    def __init__(self, params: NetworkParams, lr: float, beta1: float = 0.5, beta2: float = 0.9, eps: float = 1e-8):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        n = params.num_parameters()
        self.m = np.zeros(n)
        self.v = np.zeros(n)

    def step(self, params: NetworkParams, grads: Sequence[np.ndarray], iteration: int | None = None) -> NetworkParams:
        g = np.concatenate([np.ravel(gi) for gi in grads])
        if g.size != self.m.size:
            raise ValueError("gradient count does not match the parameter count")
        if not np.isfinite(g).all():
            where = f" at iteration {iteration}" if iteration is not None else ""
            raise NumericalError(
                f"non-finite gradient for {params.role.value}{where}",
                network=params.role.value,
                iteration=iteration,
            )
        self.step_count += 1
        t = self.step_count
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (g * g)
        step_size = self.lr / (1.0 - self.beta1**t)
        denom = np.sqrt(self.v / (1.0 - self.beta2**t)) + self.eps
        return params.with_flat(params.flat() - step_size * self.m / denom)
