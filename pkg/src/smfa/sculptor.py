"""Delta extraction, conflict/magnitude mask sculpting, and merging.

Given a forgetting delta and a retaining-anchor delta over the same
layer schema, the combined mask marks entries that simultaneously
(a) move against the anchor (strictly opposite signs) and (b) dominate
it in scaled magnitude.  Masked entries are zeroed out of the forgetting
delta before it is merged into the base weights.

All inequalities are strict; equality cases (zero products, exact
threshold hits) keep the update.  Masks contain exactly 0.0 or 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SchemaMismatch, ShapeMismatch
from .model.checkpoint import weights_digest
from .model.network import DeltaAdapter, DeltaMeta, ModelWeights, apply_delta
from .numerics.tensor import Tensor

MaskSet = dict[str, Tensor]

RHO_PER_LAYER = "per_layer"
RHO_GLOBAL = "global"


@dataclass(frozen=True)
class SculptConfig:
    k: float = 5.0
    epsilon: float = 1e-8
    rho_scope: str = RHO_PER_LAYER

    def __post_init__(self):
        if self.k < 0:
            raise ConfigError(f"k must be >= 0, got {self.k}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.rho_scope not in (RHO_PER_LAYER, RHO_GLOBAL):
            raise ConfigError(f"unknown rho_scope {self.rho_scope!r}")


def _check_same_schema(a: dict[str, Tensor], b: dict[str, Tensor], what: str) -> None:
    if set(a) != set(b):
        missing = set(a) ^ set(b)
        raise SchemaMismatch(f"{what}: layer name sets differ on {sorted(missing)}")
    for name in a:
        if a[name].shape != b[name].shape:
            raise ShapeMismatch(
                f"{what}: {name} shapes {list(a[name].shape)} vs {list(b[name].shape)}"
            )


def extract_delta(
    finetuned: ModelWeights,
    base: ModelWeights,
    *,
    method: str = "finetune",
    seed: int = 0,
) -> DeltaAdapter:
    """Per weight-matrix layer, dW = W_finetuned - W_base.

    Bias vectors are excluded; the meta records the base digest so the
    delta can only be re-applied to the weights it came from.
    """
    if set(finetuned) != set(base):
        raise SchemaMismatch("finetuned and base weight names differ")
    tensors: dict[str, Tensor] = {}
    for name in base:
        if not name.endswith(".weight"):
            continue
        if finetuned[name].shape != base[name].shape:
            raise ShapeMismatch(f"{name}: shape changed during fine-tuning")
        tensors[name] = Tensor(finetuned[name].data - base[name].data)
    return DeltaAdapter(
        tensors=tensors,
        meta=DeltaMeta(method=method, base_digest=weights_digest(base), seed=seed),
    )


def conflict_mask(delta_f: DeltaAdapter, delta_a: DeltaAdapter) -> MaskSet:
    """C_ij = 1 iff the two updates have strictly opposite signs."""
    _check_same_schema(delta_f.tensors, delta_a.tensors, "conflict_mask")
    mask: MaskSet = {}
    for name, f in delta_f.tensors.items():
        a = delta_a.tensors[name]
        mask[name] = Tensor((a.data * f.data < 0.0).astype(np.float64))
    return mask


def scale_factor(delta_f_layer: Tensor, delta_a_layer: Tensor, epsilon: float) -> float:
    """rho = ||dW_f||_F / (||dW_a||_F + epsilon)."""
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be > 0, got {epsilon}")
    norm_f = float(np.sqrt(np.sum(delta_f_layer.data ** 2)))
    norm_a = float(np.sqrt(np.sum(delta_a_layer.data ** 2)))
    return norm_f / (norm_a + epsilon)


def _rho_map(
    delta_f: DeltaAdapter, delta_a: DeltaAdapter, config: SculptConfig
) -> dict[str, float]:
    if config.rho_scope == RHO_GLOBAL:
        sq_f = sum(float(np.sum(t.data**2)) for t in delta_f.tensors.values())
        sq_a = sum(float(np.sum(t.data**2)) for t in delta_a.tensors.values())
        rho = float(np.sqrt(sq_f)) / (float(np.sqrt(sq_a)) + config.epsilon)
        return {name: rho for name in delta_f.tensors}
    return {
        name: scale_factor(delta_f.tensors[name], delta_a.tensors[name], config.epsilon)
        for name in delta_f.tensors
    }


def magnitude_mask(
    delta_f: DeltaAdapter, delta_a: DeltaAdapter, config: SculptConfig
) -> MaskSet:
    """R_ij = 1 iff k * rho * |dW_a_ij| < |dW_f_ij| (strict)."""
    _check_same_schema(delta_f.tensors, delta_a.tensors, "magnitude_mask")
    rho = _rho_map(delta_f, delta_a, config)
    mask: MaskSet = {}
    for name, f in delta_f.tensors.items():
        a = delta_a.tensors[name]
        threshold = config.k * rho[name] * np.abs(a.data)
        mask[name] = Tensor((threshold < np.abs(f.data)).astype(np.float64))
    return mask


def combine_mask(c: MaskSet, r: MaskSet) -> MaskSet:
    """M = C (*) R, the entrywise product of the two binary masks."""
    _check_same_schema(c, r, "combine_mask")
    return {name: Tensor(c[name].data * r[name].data) for name in c}


def sculpt(delta_f: DeltaAdapter, mask: MaskSet, *, k: float | None = None) -> DeltaAdapter:
    """dW' = dW (*) (1 - M): masked entries zeroed, others bit-identical.

    Computed literally as the entrywise product, so masked negative
    entries come out as -0.0; downstream merging treats any zero delta
    entry as "copy the base bit-exactly".
    """
    _check_same_schema(delta_f.tensors, mask, "sculpt")
    tensors = {
        name: Tensor(f.data * (1.0 - mask[name].data))
        for name, f in delta_f.tensors.items()
    }
    meta = DeltaMeta(
        method=f"{delta_f.meta.method}+sculpt",
        base_digest=delta_f.meta.base_digest,
        seed=delta_f.meta.seed,
        k=k,
    )
    return DeltaAdapter(tensors=tensors, meta=meta)


@dataclass
class SculptStats:
    rho: dict[str, float]
    masked_fraction: dict[str, float]
    masked_entries: int
    total_entries: int

    @property
    def overall_masked_fraction(self) -> float:
        return self.masked_entries / self.total_entries if self.total_entries else 0.0


@dataclass
class SculptResult:
    weights: ModelWeights
    mask: MaskSet
    sculpted: DeltaAdapter
    stats: SculptStats


def sculpt_pipeline(
    base: ModelWeights,
    delta_f: DeltaAdapter,
    delta_a: DeltaAdapter,
    config: SculptConfig,
) -> SculptResult:
    """conflict -> magnitude -> combine -> sculpt -> merge."""
    c = conflict_mask(delta_f, delta_a)
    r = magnitude_mask(delta_f, delta_a, config)
    m = combine_mask(c, r)
    sculpted = sculpt(delta_f, m, k=config.k)
    weights = apply_delta(base, sculpted, +1)
    rho = _rho_map(delta_f, delta_a, config)
    masked = {name: float(t.data.mean()) if t.size else 0.0 for name, t in m.items()}
    total = sum(t.size for t in m.values())
    stats = SculptStats(
        rho=rho,
        masked_fraction=masked,
        masked_entries=int(sum(t.data.sum() for t in m.values())),
        total_entries=total,
    )
    return SculptResult(weights=weights, mask=m, sculpted=sculpted, stats=stats)
