"""Numeric substrate: tensors, reverse-mode autodiff, optimizers, RNG."""

from typing import Sequence

from .autodiff import Tape, Var, softmax_cross_entropy_value
from .optim import OptimizerState, clip_gradients, optimizer_step
from .rng import SeededRng, derive_seed
from .tensor import (
    Tensor,
    absolute,
    add,
    elementwise,
    frobenius_norm,
    matmul,
    mul,
    scale,
    sign_product,
    sub,
    tensor_from,
    zeros,
)


def softmax_cross_entropy(logits: Tensor, targets: Sequence[int]) -> float:
    """Mean over the batch of -log softmax(logits)[target]."""
    return softmax_cross_entropy_value(logits.data, targets)


def backward(tape: Tape, loss: Var) -> dict[int, "object"]:
    """Reverse-mode gradients of a scalar loss; see Tape.backward."""
    return tape.backward(loss)


__all__ = [
    "Tape",
    "Var",
    "Tensor",
    "OptimizerState",
    "SeededRng",
    "absolute",
    "add",
    "backward",
    "clip_gradients",
    "derive_seed",
    "elementwise",
    "frobenius_norm",
    "matmul",
    "mul",
    "optimizer_step",
    "scale",
    "sign_product",
    "softmax_cross_entropy",
    "sub",
    "tensor_from",
    "zeros",
]
