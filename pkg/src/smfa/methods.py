"""Unlearning procedures.

Every method maps (original weights, forget set, few-shot retain set) to
an unlearned model, deterministically in the config seed:

* sculpted adapter: refusal fine-tune -> anchor fine-tune -> mask -> merge
* idk tuning:       refusal fine-tune applied directly (the unsculpted adapter)
* ga difference:    gradient ascent on forget loss, descent on retain loss
* kl minimization:  forget-loss ascent + KL tether of retain predictions
                    to the frozen original model
* manu:             activation-importance neuron pruning

Unlearning fine-tunes update weight matrices only (biases frozen), so a
fine-tune is always exactly representable as a delta adapter over the
base.  Original-model training (train_model) updates everything.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .datagen import QAItem, RefusalPool, make_refusal_set
from .errors import ConfigError, DivergedLoss, EmptyData, NonFinite
from .model.network import (
    DeltaAdapter,
    ModelConfig,
    ModelWeights,
    apply_delta,
    forward_batch,
    forward_hidden,
)
from .numerics.autodiff import Tape, log_softmax
from .numerics.optim import OptimizerState, clip_gradients, optimizer_step
from .numerics.rng import SeededRng, derive_seed
from .sculptor import SculptConfig, SculptResult, extract_delta, sculpt_pipeline


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    grad_clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (np.isfinite(self.grad_clip_norm) and self.grad_clip_norm > 0):
            raise ConfigError("grad_clip_norm must be finite and > 0")


@dataclass(frozen=True)
class ManuConfig:
    alpha: float = 10.0
    tau: float = 0.05
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0 < self.alpha < 100):
            raise ConfigError("alpha must lie in (0, 100)")
        if self.tau <= 0 or self.epsilon <= 0:
            raise ConfigError("tau and epsilon must be > 0")


def _encode(
    items: Sequence[QAItem], config: ModelConfig
) -> tuple[np.ndarray, list[list[int]], np.ndarray]:
    """(features [N, D], questions, PAD-padded targets [N, L])."""
    n = len(items)
    features = np.zeros((n, config.feature_dim), dtype=np.float64)
    questions: list[list[int]] = []
    targets = np.zeros((n, config.answer_len), dtype=np.int64)
    for i, item in enumerate(items):
        if item.feature is not None:
            features[i] = item.feature
        questions.append(list(item.question))
        if len(item.answer) > config.answer_len:
            raise ConfigError(
                f"answer length {len(item.answer)} exceeds answer_len {config.answer_len}"
            )
        targets[i, : len(item.answer)] = item.answer
    return features, questions, targets


def _forward_on_tape(tape: Tape, params: dict, config: ModelConfig, feat_leaf, questions):
    text = tape.embed_mean(params["q_embed.weight"], questions)
    img = tape.linear(feat_leaf, params["img_proj.weight"])
    h = tape.concat_cols(text, img)
    for i in range(config.hidden_layers):
        h = tape.gelu(
            tape.add_bias(tape.linear(h, params[f"trunk.{i}.weight"]), params[f"trunk.{i}.bias"])
        )
    return [
        tape.add_bias(tape.linear(h, params[f"head.{l}.weight"]), params[f"head.{l}.bias"])
        for l in range(config.answer_len)
    ]


def _mean_head_ce(tape: Tape, logits_per_head, targets: np.ndarray):
    total = None
    for l, logits in enumerate(logits_per_head):
        ce = tape.softmax_cross_entropy(logits, targets[:, l])
        total = ce if total is None else tape.add(total, ce)
    return tape.scale(total, 1.0 / len(logits_per_head))


def _run_training(
    base: ModelWeights,
    config: ModelConfig,
    cfg: TrainConfig,
    n_items: int,
    build_loss: Callable[[Tape, dict, list[int]], object],
    trainable: set[str],
    stop_check: Callable[[ModelWeights, int], bool] | None = None,
    check_every: int = 20,
) -> tuple[ModelWeights, list[float]]:
    """Shared epoch/batch loop; build_loss closes over the encoded data."""
    weights = dict(base)
    opt = OptimizerState(kind=cfg.optimizer, learning_rate=cfg.learning_rate)
    shuffle_rng = SeededRng(derive_seed(cfg.seed, "shuffle"))
    curve: list[float] = []
    names = list(weights)
    for epoch in range(cfg.epochs):
        order = list(range(n_items))
        shuffle_rng.shuffle(order)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n_items, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            tape = Tape()
            params = {name: tape.leaf(weights[name].data) for name in names}
            loss = build_loss(tape, params, idx)
            loss_value = float(loss.value)
            if not np.isfinite(loss_value):
                raise DivergedLoss(
                    f"loss {loss_value} at epoch {epoch}, batch {n_batches}"
                )
            grads_map = tape.backward(loss)
            grads = {
                name: grads_map[params[name].index]
                for name in trainable
                if params[name].index in grads_map
            }
            grads = clip_gradients(grads, cfg.grad_clip_norm)
            try:
                weights = optimizer_step(opt, weights, grads)
            except NonFinite as exc:
                raise DivergedLoss(
                    f"non-finite update at epoch {epoch}, batch {n_batches}: {exc}"
                ) from exc
            epoch_loss += loss_value
            n_batches += 1
        curve.append(epoch_loss / max(n_batches, 1))
        if stop_check is not None and (epoch + 1) % check_every == 0:
            if stop_check(weights, epoch + 1):
                break
    return weights, curve


def train_model(
    init: ModelWeights,
    config: ModelConfig,
    items: Sequence[QAItem],
    cfg: TrainConfig,
    stop_check: Callable[[ModelWeights, int], bool] | None = None,
    check_every: int = 20,
) -> tuple[ModelWeights, list[float]]:
    """Fit all parameters (weights and biases) by mean per-head CE."""
    if not items:
        raise EmptyData("no training items")
    features, questions, targets = _encode(items, config)

    def build_loss(tape, params, idx):
        feat = tape.leaf(features[idx])
        logits = _forward_on_tape(
            tape, params, config, feat, [questions[i] for i in idx]
        )
        return _mean_head_ce(tape, logits, targets[idx])

    return _run_training(
        init,
        config,
        cfg,
        len(items),
        build_loss,
        trainable=set(init),
        stop_check=stop_check,
        check_every=check_every,
    )


def finetune(
    base: ModelWeights,
    config: ModelConfig,
    items: Sequence[QAItem],
    cfg: TrainConfig,
    *,
    method: str = "finetune",
) -> DeltaAdapter:
    """CE fine-tune of the weight matrices only; returns the extracted delta."""
    if not items:
        raise EmptyData("no fine-tuning items")
    if cfg.epochs == 0:
        return extract_delta(base, base, method=method, seed=cfg.seed)
    features, questions, targets = _encode(items, config)

    def build_loss(tape, params, idx):
        feat = tape.leaf(features[idx])
        logits = _forward_on_tape(
            tape, params, config, feat, [questions[i] for i in idx]
        )
        return _mean_head_ce(tape, logits, targets[idx])

    trainable = set(config.weight_matrix_names())
    final, _ = _run_training(base, config, cfg, len(items), build_loss, trainable)
    return extract_delta(final, base, method=method, seed=cfg.seed)


def refusal_seed(train_cfg: TrainConfig) -> int:
    """The refusal-label stream shared by the sculpted and idk methods."""
    return derive_seed(train_cfg.seed, "refusal")


@dataclass
class SmfaUnlearnResult:
    weights: ModelWeights
    mask: dict
    delta_f: DeltaAdapter
    delta_a: DeltaAdapter
    sculpted: DeltaAdapter
    stats: object


def smfa_unlearn(
    base: ModelWeights,
    config: ModelConfig,
    d_f: Sequence[QAItem],
    d_r_few: Sequence[QAItem],
    pool: RefusalPool,
    train_cfg: TrainConfig,
    sculpt_cfg: SculptConfig,
) -> SmfaUnlearnResult:
    """Refusal fine-tune, anchor fine-tune, mask, sculpt, merge."""
    refusal_items = make_refusal_set(list(d_f), pool, refusal_seed(train_cfg))
    delta_f = finetune(
        base, config, refusal_items + list(d_r_few), train_cfg, method="mfa"
    )
    delta_a = finetune(base, config, list(d_r_few), train_cfg, method="anchor")
    result: SculptResult = sculpt_pipeline(base, delta_f, delta_a, sculpt_cfg)
    return SmfaUnlearnResult(
        weights=result.weights,
        mask=result.mask,
        delta_f=delta_f,
        delta_a=delta_a,
        sculpted=result.sculpted,
        stats=result.stats,
    )


def idk_tuning_unlearn(
    base: ModelWeights,
    config: ModelConfig,
    d_f: Sequence[QAItem],
    d_r_few: Sequence[QAItem],
    pool: RefusalPool,
    train_cfg: TrainConfig,
) -> ModelWeights:
    """Refusal fine-tune applied directly: the unsculpted forgetting adapter."""
    refusal_items = make_refusal_set(list(d_f), pool, refusal_seed(train_cfg))
    delta = finetune(base, config, refusal_items + list(d_r_few), train_cfg, method="idk")
    return apply_delta(base, delta, +1)


def _paired_batches(
    n: int, batch_size: int, rng: SeededRng
) -> list[tuple[list[int], list[int]]]:
    """Index batches over two same-sized sets, shuffled independently."""
    order_f = list(range(n))
    order_r = list(range(n))
    rng.shuffle(order_f)
    rng.shuffle(order_r)
    out = []
    for start in range(0, n, batch_size):
        out.append((order_f[start : start + batch_size], order_r[start : start + batch_size]))
    return out


def _run_forget_retain(
    base: ModelWeights,
    config: ModelConfig,
    d_f: Sequence[QAItem],
    d_r_few: Sequence[QAItem],
    cfg: TrainConfig,
    retain_term: Callable[[Tape, dict, list[int]], object],
) -> ModelWeights:
    """Shared ascent/descent loop: loss = -CE(forget batch) + retain term."""
    if not d_f or not d_r_few:
        raise EmptyData("forget and retain-few sets must be non-empty")
    f_features, f_questions, f_targets = _encode(d_f, config)

    weights = dict(base)
    opt = OptimizerState(kind=cfg.optimizer, learning_rate=cfg.learning_rate)
    rng = SeededRng(derive_seed(cfg.seed, "shuffle"))
    names = list(weights)
    trainable = set(config.weight_matrix_names())
    n = len(d_f)
    for epoch in range(cfg.epochs):
        batches_f = _paired_batches(n, cfg.batch_size, rng)
        # retain indices cycle over d_r_few (same size as d_f by construction)
        for step, (idx_f, idx_r) in enumerate(batches_f):
            idx_r = [i % len(d_r_few) for i in idx_r]
            tape = Tape()
            params = {name: tape.leaf(weights[name].data) for name in names}
            feat_f = tape.leaf(f_features[idx_f])
            logits_f = _forward_on_tape(
                tape, params, config, feat_f, [f_questions[i] for i in idx_f]
            )
            ce_f = _mean_head_ce(tape, logits_f, f_targets[idx_f])
            loss = tape.add(tape.scale(ce_f, -1.0), retain_term(tape, params, idx_r))
            if not np.isfinite(float(loss.value)):
                raise DivergedLoss(f"loss diverged at epoch {epoch}, step {step}")
            grads_map = tape.backward(loss)
            grads = {
                name: grads_map[params[name].index]
                for name in trainable
                if params[name].index in grads_map
            }
            grads = clip_gradients(grads, cfg.grad_clip_norm)
            try:
                weights = optimizer_step(opt, weights, grads)
            except NonFinite as exc:
                raise DivergedLoss(f"non-finite update at epoch {epoch}") from exc
    return weights


def ga_difference_unlearn(
    base: ModelWeights,
    config: ModelConfig,
    d_f: Sequence[QAItem],
    d_r_few: Sequence[QAItem],
    train_cfg: TrainConfig,
) -> ModelWeights:
    """Minimize -CE(forget, true labels) + CE(retain few); clipped ascent.

    Degrades output quality by design; the final weights are returned
    even when refusal behavior never appears.
    """
    r_features, r_questions, r_targets = _encode(d_r_few, config)

    def retain_term(tape, params, idx_r):
        feat = tape.leaf(r_features[idx_r])
        logits = _forward_on_tape(
            tape, params, config, feat, [r_questions[i] for i in idx_r]
        )
        return _mean_head_ce(tape, logits, r_targets[idx_r])

    return _run_forget_retain(base, config, d_f, d_r_few, train_cfg, retain_term)


def kl_minimization_unlearn(
    base: ModelWeights,
    config: ModelConfig,
    d_f: Sequence[QAItem],
    d_r_few: Sequence[QAItem],
    train_cfg: TrainConfig,
) -> ModelWeights:
    """Forget-loss ascent plus mean per-head KL(original || current) on retain.

    The original model's retain-set head distributions are precomputed
    once and held fixed as the KL reference.
    """
    r_features, r_questions, _ = _encode(d_r_few, config)
    base_logits = forward_batch(base, config, r_features, r_questions)
    ref_probs = np.exp(
        np.stack([log_softmax(base_logits[:, l, :]) for l in range(config.answer_len)], axis=1)
    )  # [N, L, V]

    def retain_term(tape, params, idx_r):
        feat = tape.leaf(r_features[idx_r])
        logits = _forward_on_tape(
            tape, params, config, feat, [r_questions[i] for i in idx_r]
        )
        total = None
        for l, lv in enumerate(logits):
            kl = tape.kl_to_reference(lv, ref_probs[idx_r, l, :])
            total = kl if total is None else tape.add(total, kl)
        return tape.scale(total, 1.0 / config.answer_len)

    return _run_forget_retain(base, config, d_f, d_r_few, train_cfg, retain_term)


# -- neuron pruning -------------------------------------------------------


def manu_importance(
    base: ModelWeights,
    config: ModelConfig,
    items: Sequence[QAItem],
    manu_cfg: ManuConfig,
) -> np.ndarray:
    """Unified importance per trunk neuron, indexed layer-major.

    Over each neuron's post-activation values z across all items:
    mean |z|, the fraction with |z| > tau, the population variance, and
    the root mean square, summed into one score.
    """
    if not items:
        raise EmptyData("importance needs at least one item")
    features, questions, _ = _encode(items, config)
    acts = forward_hidden(base, config, features, questions)
    scores = []
    for z in acts:  # [N, hidden] per trunk layer
        i_abs = np.abs(z).mean(axis=0)
        i_freq = (np.abs(z) > manu_cfg.tau).mean(axis=0)
        i_var = z.var(axis=0)
        i_rms = np.sqrt((z * z).mean(axis=0))
        scores.append(i_abs + i_freq + i_var + i_rms)
    return np.concatenate(scores)


def manu_unlearn(
    base: ModelWeights,
    config: ModelConfig,
    d_f: Sequence[QAItem],
    d_r_few: Sequence[QAItem],
    manu_cfg: ManuConfig,
) -> ModelWeights:
    """Ablate the top alpha% of neurons by forget/retain importance ratio.

    A pruned neuron's incoming row, bias entry, and outgoing column are
    all zeroed, so its post-activation is identically zero afterwards.
    Ties in the score break toward the lower neuron index.
    """
    from .numerics.tensor import Tensor

    imp_f = manu_importance(base, config, d_f, manu_cfg)
    imp_r = manu_importance(base, config, d_r_few, manu_cfg)
    scores = imp_f / (imp_r + manu_cfg.epsilon)
    n_neurons = scores.size
    n_prune = int(np.floor(manu_cfg.alpha / 100.0 * n_neurons))
    if n_prune == 0:
        return dict(base)
    # stable sort on -score keeps ascending index order within ties
    selected = np.argsort(-scores, kind="stable")[:n_prune]

    arrays = {name: base[name].data.copy() for name in base}
    hidden = config.hidden_dim
    for neuron in sorted(int(i) for i in selected):
        layer, unit = divmod(neuron, hidden)
        arrays[f"trunk.{layer}.weight"][unit, :] = 0.0
        arrays[f"trunk.{layer}.bias"][unit] = 0.0
        if layer + 1 < config.hidden_layers:
            arrays[f"trunk.{layer + 1}.weight"][:, unit] = 0.0
        else:
            for l in range(config.answer_len):
                arrays[f"head.{l}.weight"][:, unit] = 0.0
    return {name: Tensor(a) for name, a in arrays.items()}


def wall_time_run(fn, *args, **kwargs):
    """(result, elapsed seconds) helper for run manifests."""
    start = time.perf_counter()
    result = fn(*args, **kwargs)
    return result, time.perf_counter() - start
