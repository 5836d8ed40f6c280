"""SGD and Adam over named parameter maps.

``optimizer_step`` mutates the passed :class:`OptimizerState` in place
(step count and moment buffers) and returns a fresh parameter map; the
input parameter map itself is never modified.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeMismatch
from .tensor import Tensor


@dataclass
class OptimizerState:
    kind: str  # "sgd" | "adam"
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")


def optimizer_step(
    state: OptimizerState,
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
) -> dict[str, Tensor]:
    """One update over the named parameters present in ``grads``.

    Parameters without a gradient entry are carried over unchanged.
    Deterministic: same (state, params, grads) gives bit-identical output.
    """
    for name, g in grads.items():
        if name not in params:
            raise ShapeMismatch(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeMismatch(
                f"{name}: grad shape {g.shape} vs param {params[name].shape}"
            )
    state.step_count += 1
    lr = state.learning_rate
    new_params = dict(params)
    if state.kind == "sgd":
        for name, g in grads.items():
            new_params[name] = Tensor(params[name].data - lr * g)
        return new_params

    t = state.step_count
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for name, g in grads.items():
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        update = lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
        new_params[name] = Tensor(params[name].data - update)
    return new_params


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale the whole gradient map so its global L2 norm is <= max_norm."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = np.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return grads
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}
