"""Reverse-mode automatic differentiation over a fixed primitive set.

A :class:`Tape` records one node per primitive call; recording order is
topological by construction, so ``backward`` simply walks the node list
in reverse, accumulating gradients.  The primitive set covers exactly
what the training losses need -- matmul, linear (x @ W^T), row-wise bias
add, elementwise add/sub/mul/scale, GELU, column concatenation,
embedding mean-pool, sum, sum of squares, softmax cross-entropy, and KL
divergence against a fixed reference distribution.  The only broadcast
is the bias add.

Values are raw float64 ndarrays for speed; the :class:`~.tensor.Tensor`
wrapper is applied at module boundaries by callers.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from ..errors import IndexOutOfRange, NotScalar, ShapeMismatch

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu_value(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_derivative(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return cdf + x * pdf


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max subtraction for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_targets(targets: np.ndarray, classes: int) -> None:
    if targets.size and (targets.min() < 0 or targets.max() >= classes):
        raise IndexOutOfRange(
            f"target outside [0, {classes}): {targets.min()}..{targets.max()}"
        )


def softmax_cross_entropy_value(logits: np.ndarray, targets: Sequence[int]) -> float:
    """Mean over rows of -log softmax(logits)[target]."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise ShapeMismatch("logits must be [batch, classes] with batch >= 1")
    t = np.asarray(list(targets), dtype=np.int64)
    if t.shape != (logits.shape[0],):
        raise ShapeMismatch("one target per logits row required")
    _check_targets(t, logits.shape[1])
    logp = log_softmax(logits)
    return float(-logp[np.arange(len(t)), t].mean())


class Var:
    """A recorded value on a tape."""

    __slots__ = ("value", "index")

    def __init__(self, value: np.ndarray, index: int):
        self.value = value
        self.index = index

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


class Tape:
    """Records primitives and runs reverse-mode accumulation."""

    def __init__(self):
        # node i: (input indices, backward fn: out_grad -> per-input grads)
        self._nodes: list[tuple[tuple[int, ...], Callable | None]] = []
        self._shapes: list[tuple[int, ...]] = []

    def _record(self, value: np.ndarray, inputs: tuple[int, ...], bwd: Callable | None) -> Var:
        index = len(self._nodes)
        self._nodes.append((inputs, bwd))
        self._shapes.append(value.shape)
        return Var(value, index)

    def leaf(self, value: np.ndarray) -> Var:
        return self._record(np.asarray(value, dtype=np.float64), (), None)

    # -- arithmetic -----------------------------------------------------

    def add(self, a: Var, b: Var) -> Var:
        if a.shape != b.shape:
            raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
        return self._record(a.value + b.value, (a.index, b.index), lambda g: (g, g))

    def sub(self, a: Var, b: Var) -> Var:
        if a.shape != b.shape:
            raise ShapeMismatch(f"sub: {a.shape} vs {b.shape}")
        return self._record(a.value - b.value, (a.index, b.index), lambda g: (g, -g))

    def mul(self, a: Var, b: Var) -> Var:
        if a.shape != b.shape:
            raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")
        av, bv = a.value, b.value
        return self._record(av * bv, (a.index, b.index), lambda g: (g * bv, g * av))

    def scale(self, a: Var, c: float) -> Var:
        c = float(c)
        return self._record(a.value * c, (a.index,), lambda g: (g * c,))

    def matmul(self, a: Var, b: Var) -> Var:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
        av, bv = a.value, b.value
        return self._record(
            av @ bv, (a.index, b.index), lambda g: (g @ bv.T, av.T @ g)
        )

    def linear(self, x: Var, w: Var) -> Var:
        """x [n, in] @ w.T with w [out, in] -> [n, out]."""
        if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[1]:
            raise ShapeMismatch(f"linear: x {x.shape}, w {w.shape}")
        xv, wv = x.value, w.value
        return self._record(
            xv @ wv.T, (x.index, w.index), lambda g: (g @ wv, g.T @ xv)
        )

    def add_bias(self, x: Var, b: Var) -> Var:
        """Row-wise bias add: x [n, m] + b [m] (the one allowed broadcast)."""
        if x.value.ndim != 2 or b.value.ndim != 1 or x.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"add_bias: x {x.shape}, b {b.shape}")
        return self._record(
            x.value + b.value, (x.index, b.index), lambda g: (g, g.sum(axis=0))
        )

    def gelu(self, x: Var) -> Var:
        xv = x.value
        return self._record(
            gelu_value(xv), (x.index,), lambda g: (g * gelu_derivative(xv),)
        )

    def concat_cols(self, a: Var, b: Var) -> Var:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[0] != b.shape[0]:
            raise ShapeMismatch(f"concat_cols: {a.shape} vs {b.shape}")
        na = a.shape[1]
        return self._record(
            np.concatenate([a.value, b.value], axis=1),
            (a.index, b.index),
            lambda g: (g[:, :na], g[:, na:]),
        )

    def embed_mean(self, table: Var, token_lists: Sequence[Sequence[int]]) -> Var:
        """Mean of table rows per token list -> [batch, embed].

        Gradient scatter-adds g_row / n_tokens back into the table rows.
        An empty token list yields a zero row.
        """
        tv = table.value
        batch = len(token_lists)
        out = np.zeros((batch, tv.shape[1]), dtype=np.float64)
        for i, toks in enumerate(token_lists):
            if len(toks):
                out[i] = tv[list(toks)].mean(axis=0)

        def bwd(g: np.ndarray):
            gt = np.zeros_like(tv)
            for i, toks in enumerate(token_lists):
                if len(toks):
                    np.add.at(gt, list(toks), g[i] / len(toks))
            return (gt,)

        return self._record(out, (table.index,), bwd)

    # -- reductions and losses ------------------------------------------

    def sum(self, x: Var) -> Var:
        xv = x.value
        return self._record(
            np.asarray(xv.sum()), (x.index,), lambda g: (np.full_like(xv, float(g)),)
        )

    def sum_squares(self, x: Var) -> Var:
        xv = x.value
        return self._record(
            np.asarray((xv * xv).sum()), (x.index,), lambda g: (2.0 * float(g) * xv,)
        )

    def softmax_cross_entropy(self, logits: Var, targets: Sequence[int]) -> Var:
        lv = logits.value
        if lv.ndim != 2 or lv.shape[0] < 1:
            raise ShapeMismatch("logits must be [batch, classes] with batch >= 1")
        t = np.asarray(list(targets), dtype=np.int64)
        if t.shape != (lv.shape[0],):
            raise ShapeMismatch("one target per logits row required")
        _check_targets(t, lv.shape[1])
        logp = log_softmax(lv)
        n = lv.shape[0]
        value = np.asarray(-logp[np.arange(n), t].mean())
        probs = np.exp(logp)

        def bwd(g: np.ndarray):
            grad = probs.copy()
            grad[np.arange(n), t] -= 1.0
            return (grad * (float(g) / n),)

        return self._record(value, (logits.index,), bwd)

    def kl_to_reference(self, logits: Var, ref_probs: np.ndarray) -> Var:
        """Mean over rows of KL(ref || softmax(logits)); ref is constant.

        Zero-probability reference entries contribute zero (0 log 0 = 0).
        """
        lv = logits.value
        ref = np.asarray(ref_probs, dtype=np.float64)
        if lv.shape != ref.shape or lv.ndim != 2:
            raise ShapeMismatch(f"kl_to_reference: {lv.shape} vs {ref.shape}")
        logp = log_softmax(lv)
        with np.errstate(divide="ignore", invalid="ignore"):
            ref_entropy = np.where(ref > 0.0, ref * np.log(ref), 0.0).sum(axis=1)
        cross = -(ref * logp).sum(axis=1)
        n = lv.shape[0]
        value = np.asarray((ref_entropy + cross).mean())
        probs = np.exp(logp)

        def bwd(g: np.ndarray):
            row_mass = ref.sum(axis=1, keepdims=True)
            return ((probs * row_mass - ref) * (float(g) / n),)

        return self._record(value, (logits.index,), bwd)

    # -- reverse pass ----------------------------------------------------

    def backward(self, loss: Var) -> dict[int, np.ndarray]:
        """Gradients of a scalar loss for every node that influences it.

        Returns a map node-index -> gradient array (shape-matching the
        node's value).  Query leaves via their ``Var.index``.
        """
        if loss.value.shape != ():
            raise NotScalar(f"loss has shape {loss.value.shape}, expected scalar")
        grads: dict[int, np.ndarray] = {loss.index: np.asarray(1.0)}
        for i in range(loss.index, -1, -1):
            g = grads.get(i)
            if g is None:
                continue
            inputs, bwd = self._nodes[i]
            if bwd is None:
                continue
            for j, contrib in zip(inputs, bwd(g)):
                if j in grads:
                    grads[j] = grads[j] + contrib
                else:
                    grads[j] = contrib
        return grads
