"""The desk-scale bimodal network and weight-map operations.

Architecture: mean of question-token embeddings, concatenated with a
linear projection of the feature vector, feeds ``hidden_layers`` GELU
blocks, topped by ``answer_len`` independent classification heads over
the answer vocabulary.  A zero feature vector is the text-only input
mode (the image pathway contributes exactly zero).

Weights are a named map layer -> Tensor.  Deltas cover weight matrices
only; biases are never part of an adapter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import (
    ConfigError,
    DigestMismatch,
    FeatureDimMismatch,
    SchemaMismatch,
    ShapeMismatch,
    TokenOutOfRange,
)
from ..numerics.autodiff import gelu_value
from ..numerics.rng import SeededRng, derive_seed
from ..numerics.tensor import Tensor

ModelWeights = dict[str, Tensor]

PAD_TOKEN = 0


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    question_vocab: int
    answer_vocab: int
    embed_dim: int
    hidden_dim: int
    hidden_layers: int
    answer_len: int
    max_question_len: int

    def __post_init__(self):
        for name in (
            "feature_dim",
            "question_vocab",
            "answer_vocab",
            "embed_dim",
            "hidden_dim",
            "hidden_layers",
            "answer_len",
            "max_question_len",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        """The full name -> shape schema, in a fixed order."""
        shapes: dict[str, tuple[int, ...]] = {
            "img_proj.weight": (self.embed_dim, self.feature_dim),
            "q_embed.weight": (self.question_vocab, self.embed_dim),
        }
        in_dim = 2 * self.embed_dim
        for i in range(self.hidden_layers):
            shapes[f"trunk.{i}.weight"] = (self.hidden_dim, in_dim)
            shapes[f"trunk.{i}.bias"] = (self.hidden_dim,)
            in_dim = self.hidden_dim
        for l in range(self.answer_len):
            shapes[f"head.{l}.weight"] = (self.answer_vocab, self.hidden_dim)
            shapes[f"head.{l}.bias"] = (self.answer_vocab,)
        return shapes

    def weight_matrix_names(self) -> list[str]:
        """Names eligible for adapters (biases excluded)."""
        return [n for n in self.layer_shapes() if n.endswith(".weight")]


@dataclass
class DeltaMeta:
    method: str
    base_digest: bytes
    seed: int
    k: float | None = None


@dataclass
class DeltaAdapter:
    """Named weight-matrix update, tied to the base it was extracted from."""

    tensors: dict[str, Tensor]
    meta: DeltaMeta


@dataclass
class LowRankAdapter:
    """Per-layer (A [r, in], B [out, r]) factors; expands to B @ A."""

    factors: dict[str, tuple[Tensor, Tensor]]
    meta: DeltaMeta = field(
        default_factory=lambda: DeltaMeta(method="lowrank", base_digest=b"", seed=0)
    )


def init_model(config: ModelConfig, seed: int) -> ModelWeights:
    """Seed-deterministic init: matrices ~ N(0, 1/sqrt(fan_in)), biases zero.

    fan_in is the input dimension of each matrix.  The embedding table is
    a linear map over one-hot tokens, so its fan_in is the question
    vocabulary; the small resulting scale keeps semantically inert tokens
    from dominating the mean-pool until training grows the useful ones.
    """
    weights: ModelWeights = {}
    for name, shape in config.layer_shapes().items():
        if name.endswith(".bias"):
            weights[name] = Tensor(np.zeros(shape, dtype=np.float64))
            continue
        rng = SeededRng(derive_seed(seed, "init", name))
        fan_in = shape[0] if name == "q_embed.weight" else shape[1]
        weights[name] = Tensor(rng.normal_array(shape, std=1.0 / np.sqrt(fan_in)))
    return weights


def _check_question(config: ModelConfig, question: Sequence[int]) -> list[int]:
    toks = [int(t) for t in question]
    if len(toks) > config.max_question_len:
        raise TokenOutOfRange(
            f"question length {len(toks)} exceeds max {config.max_question_len}"
        )
    for t in toks:
        if t < 0 or t >= config.question_vocab:
            raise TokenOutOfRange(f"token {t} outside vocab {config.question_vocab}")
    return toks


def _check_feature(config: ModelConfig, feature: Sequence[float]) -> np.ndarray:
    f = np.asarray(feature, dtype=np.float64)
    if f.shape != (config.feature_dim,):
        raise FeatureDimMismatch(
            f"feature shape {f.shape} vs feature_dim {config.feature_dim}"
        )
    return f


def forward_batch(
    weights: ModelWeights,
    config: ModelConfig,
    features: np.ndarray,
    questions: Sequence[Sequence[int]],
) -> np.ndarray:
    """Batched forward pass -> logits [batch, answer_len, answer_vocab]."""
    table = weights["q_embed.weight"].data
    batch = len(questions)
    text = np.zeros((batch, config.embed_dim), dtype=np.float64)
    for i, toks in enumerate(questions):
        if len(toks):
            text[i] = table[list(toks)].mean(axis=0)
    img = features @ weights["img_proj.weight"].data.T
    h = np.concatenate([text, img], axis=1)
    for i in range(config.hidden_layers):
        h = gelu_value(
            h @ weights[f"trunk.{i}.weight"].data.T + weights[f"trunk.{i}.bias"].data
        )
    logits = np.empty((batch, config.answer_len, config.answer_vocab), dtype=np.float64)
    for l in range(config.answer_len):
        logits[:, l, :] = (
            h @ weights[f"head.{l}.weight"].data.T + weights[f"head.{l}.bias"].data
        )
    return logits


def forward(
    weights: ModelWeights,
    config: ModelConfig,
    feature: Sequence[float],
    question: Sequence[int],
) -> Tensor:
    """Single-item forward pass -> logits Tensor [answer_len, answer_vocab]."""
    toks = _check_question(config, question)
    f = _check_feature(config, feature)
    logits = forward_batch(weights, config, f[None, :], [toks])
    return Tensor(logits[0])


def forward_hidden(
    weights: ModelWeights,
    config: ModelConfig,
    features: np.ndarray,
    questions: Sequence[Sequence[int]],
) -> list[np.ndarray]:
    """Post-GELU activations of every trunk layer, each [batch, hidden_dim]."""
    table = weights["q_embed.weight"].data
    batch = len(questions)
    text = np.zeros((batch, config.embed_dim), dtype=np.float64)
    for i, toks in enumerate(questions):
        if len(toks):
            text[i] = table[list(toks)].mean(axis=0)
    img = features @ weights["img_proj.weight"].data.T
    h = np.concatenate([text, img], axis=1)
    acts = []
    for i in range(config.hidden_layers):
        h = gelu_value(
            h @ weights[f"trunk.{i}.weight"].data.T + weights[f"trunk.{i}.bias"].data
        )
        acts.append(h)
    return acts


def predict_batch(
    weights: ModelWeights,
    config: ModelConfig,
    features: np.ndarray,
    questions: Sequence[Sequence[int]],
) -> list[list[int]]:
    """Argmax per head, PAD-stripped at the tail; ties pick the lowest id."""
    logits = forward_batch(weights, config, features, questions)
    toks = logits.argmax(axis=2)  # np.argmax returns the first (lowest) max index
    out = []
    for row in toks:
        seq = [int(t) for t in row]
        while seq and seq[-1] == PAD_TOKEN:
            seq.pop()
        out.append(seq)
    return out


def predict_answer(
    weights: ModelWeights,
    config: ModelConfig,
    feature: Sequence[float],
    question: Sequence[int],
) -> list[int]:
    toks = _check_question(config, question)
    f = _check_feature(config, feature)
    return predict_batch(weights, config, f[None, :], [toks])[0]


def _check_delta_schema(base: ModelWeights, tensors: dict[str, Tensor]) -> None:
    for name, t in tensors.items():
        if name not in base:
            raise SchemaMismatch(f"delta layer {name!r} absent from base")
        if t.shape != base[name].shape:
            raise ShapeMismatch(
                f"{name}: delta shape {list(t.shape)} vs base {list(base[name].shape)}"
            )


def apply_delta(
    base: ModelWeights,
    delta: DeltaAdapter,
    sign: int,
    *,
    allow_digest_mismatch: bool = False,
) -> ModelWeights:
    """Per layer W +/- dW; layers absent from the delta are copied unchanged.

    Entries whose delta is exactly zero copy the base value bit-exactly
    (no IEEE addition is performed for them), so an all-zero delta is a
    bitwise identity.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if not allow_digest_mismatch and delta.meta.base_digest:
        from .checkpoint import weights_digest

        if weights_digest(base) != delta.meta.base_digest:
            raise DigestMismatch("delta was extracted against different base weights")
    _check_delta_schema(base, delta.tensors)
    out: ModelWeights = {}
    for name, w in base.items():
        d = delta.tensors.get(name)
        if d is None:
            out[name] = w
        else:
            dd = sign * d.data
            out[name] = Tensor(np.where(d.data != 0.0, w.data + dd, w.data))
    return out


def expand_lowrank(adapter: LowRankAdapter) -> DeltaAdapter:
    """Densify per layer: dW = B @ A."""
    tensors: dict[str, Tensor] = {}
    for name, (a, b) in adapter.factors.items():
        if len(a.shape) != 2 or len(b.shape) != 2 or b.shape[1] != a.shape[0]:
            raise ShapeMismatch(
                f"{name}: B {list(b.shape)} @ A {list(a.shape)} is inconsistent"
            )
        tensors[name] = Tensor(b.data @ a.data)
    return DeltaAdapter(tensors=tensors, meta=adapter.meta)
