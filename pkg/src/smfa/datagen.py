"""Synthetic forget/retain/understanding benchmark.

Profiles pair a random feature vector (the "image") with memorized
attribute answers that are drawn independently of the feature: attribute
answers are memory, not inference, while understanding answers are a
pure function of the feature (4-way quantile bucket of one component).

Question token layout (question vocabulary):
    0                reserved
    1..3             category markers: image-memory / text-memory / understanding
    next A           attribute-key tokens
    next U           feature-component tokens
    next n_name      name tokens (profiles carry a unique 2-token name)
    next n_filler    filler tokens (surface variants differ only here)

Answer token layout (answer vocabulary):
    0                PAD
    1..4             quartile buckets Q1..Q4 (understanding answers)
    next 4           refusal start tokens
    next 8           refusal body tokens
    next n_value     attribute value tokens (memory answers, length 2)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    EmptyPool,
    IoError,
    RatioTooLarge,
    VocabOverflow,
)
from .numerics.rng import SeededRng, derive_seed

FORGET_RATIOS = (0.05, 0.10, 0.15)

CATEGORY_IMAGE_MEMORY = "image_memory"
CATEGORY_TEXT_MEMORY = "text_memory"
CATEGORY_UNDERSTANDING = "understanding"
MEMORY_CATEGORIES = (CATEGORY_IMAGE_MEMORY, CATEGORY_TEXT_MEMORY)

SPLIT_FORGET = "forget"
SPLIT_RETAIN_FEW = "retain_few"
SPLIT_RETAIN = "retain"
SPLIT_HOLDOUT = "holdout"

# Standard-normal quartiles; intervals are right-open: [-inf, -q), [-q, 0), [0, q), [q, inf)
BUCKET_THRESHOLDS = (-0.6745, 0.0, 0.6745)


@dataclass(frozen=True)
class BenchSpec:
    n_profiles: int = 200
    n_holdout: int = 50
    feature_dim: int = 16
    n_attributes: int = 4
    n_understanding: int = 4
    forget_ratio: float = 0.10
    n_variants: int = 3
    pool_size: int = 16
    seed: int = 1
    n_name_tokens: int = 24
    n_value_tokens: int = 24
    n_filler_tokens: int = 16

    def __post_init__(self):
        if not any(abs(self.forget_ratio - r) < 1e-9 for r in FORGET_RATIOS):
            raise ConfigError(
                f"forget_ratio must be one of {FORGET_RATIOS}, got {self.forget_ratio}"
            )
        if self.n_understanding > self.feature_dim:
            raise ConfigError("n_understanding cannot exceed feature_dim")
        if self.n_variants < 2:
            raise ConfigError("need n_variants >= 2 (variant 0 trains, >=1 evaluate)")
        if self.n_variants > self.n_filler_tokens:
            raise ConfigError("n_variants cannot exceed n_filler_tokens")
        if self.pool_size < 8:
            raise ConfigError("refusal pool must hold at least 8 sequences")
        for name in ("n_profiles", "n_holdout", "feature_dim", "n_attributes", "n_understanding"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return {
            "n_profiles": self.n_profiles,
            "n_holdout": self.n_holdout,
            "feature_dim": self.feature_dim,
            "n_attributes": self.n_attributes,
            "n_understanding": self.n_understanding,
            "forget_ratio": self.forget_ratio,
            "n_variants": self.n_variants,
            "pool_size": self.pool_size,
            "seed": self.seed,
            "n_name_tokens": self.n_name_tokens,
            "n_value_tokens": self.n_value_tokens,
            "n_filler_tokens": self.n_filler_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        return cls(**d)


@dataclass(frozen=True)
class VocabLayout:
    """Token-id ranges derived from a BenchSpec."""

    n_attributes: int
    n_understanding: int
    n_name_tokens: int
    n_value_tokens: int
    n_filler_tokens: int

    # question side
    marker_image: int = 1
    marker_text: int = 2
    marker_understanding: int = 3

    @property
    def attr_start(self) -> int:
        return 4

    @property
    def comp_start(self) -> int:
        return self.attr_start + self.n_attributes

    @property
    def name_start(self) -> int:
        return self.comp_start + self.n_understanding

    @property
    def filler_start(self) -> int:
        return self.name_start + self.n_name_tokens

    @property
    def question_vocab(self) -> int:
        return self.filler_start + self.n_filler_tokens

    # answer side
    @property
    def pad(self) -> int:
        return 0

    @property
    def bucket_start(self) -> int:
        return 1

    @property
    def refuse_start(self) -> int:
        return self.bucket_start + 4

    @property
    def n_refuse_start(self) -> int:
        return 4

    @property
    def refuse_body(self) -> int:
        return self.refuse_start + self.n_refuse_start

    @property
    def n_refuse_body(self) -> int:
        return 8

    @property
    def value_start(self) -> int:
        return self.refuse_body + self.n_refuse_body

    @property
    def answer_vocab(self) -> int:
        return self.value_start + self.n_value_tokens

    @property
    def refuse_start_tokens(self) -> frozenset[int]:
        return frozenset(range(self.refuse_start, self.refuse_start + self.n_refuse_start))

    @property
    def refusal_tokens(self) -> frozenset[int]:
        return frozenset(range(self.refuse_start, self.value_start))

    @property
    def bucket_tokens(self) -> frozenset[int]:
        return frozenset(range(self.bucket_start, self.bucket_start + 4))

    @property
    def value_tokens(self) -> frozenset[int]:
        return frozenset(range(self.value_start, self.value_start + self.n_value_tokens))

    def attr_token(self, k: int) -> int:
        return self.attr_start + k

    def comp_token(self, j: int) -> int:
        return self.comp_start + j

    def bucket_token(self, idx: int) -> int:
        return self.bucket_start + idx

    def to_dict(self) -> dict:
        return {
            "n_attributes": self.n_attributes,
            "n_understanding": self.n_understanding,
            "n_name_tokens": self.n_name_tokens,
            "n_value_tokens": self.n_value_tokens,
            "n_filler_tokens": self.n_filler_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VocabLayout":
        return cls(**d)


def layout_for(spec: BenchSpec) -> VocabLayout:
    return VocabLayout(
        n_attributes=spec.n_attributes,
        n_understanding=spec.n_understanding,
        n_name_tokens=spec.n_name_tokens,
        n_value_tokens=spec.n_value_tokens,
        n_filler_tokens=spec.n_filler_tokens,
    )


@dataclass
class Profile:
    id: int
    holdout: bool
    feature: np.ndarray
    name_tokens: list[int]
    attributes: list[list[int]]  # attr k -> answer token list


@dataclass
class QAItem:
    profile_id: int
    category: str
    split: str
    variant: int
    feature: np.ndarray | None  # None means the zero vector (text-only)
    question: list[int]
    answer: list[int]


@dataclass
class RefusalPool:
    sequences: list[list[int]]

    def __post_init__(self):
        if len(self.sequences) < 8:
            raise ConfigError("refusal pool needs >= 8 sequences")
        seen = {tuple(s) for s in self.sequences}
        if len(seen) != len(self.sequences):
            raise ConfigError("refusal pool sequences must be distinct")


def bucket_index(value: float) -> int:
    """4-way quantization at standard-normal quartiles (right-open intervals)."""
    for i, t in enumerate(BUCKET_THRESHOLDS):
        if value < t:
            return i
    return 3


def bucket(value: float, layout: VocabLayout) -> int:
    """Understanding answer token Q1..Q4 for a feature component."""
    return layout.bucket_token(bucket_index(value))


def make_refusal_pool(layout: VocabLayout, size: int, seed: int) -> RefusalPool:
    """Distinct 2-token refusal sequences [start, body]."""
    combos = [
        [s, b]
        for s in range(layout.refuse_start, layout.refuse_start + layout.n_refuse_start)
        for b in range(layout.refuse_body, layout.refuse_body + layout.n_refuse_body)
    ]
    if size > len(combos):
        raise VocabOverflow(f"pool size {size} exceeds {len(combos)} distinct refusals")
    rng = SeededRng(derive_seed(seed, "refusal_pool"))
    rng.shuffle(combos)
    return RefusalPool(sequences=combos[:size])


def generate_profiles(spec: BenchSpec) -> list[Profile]:
    """Trained profiles first, then holdout; deterministic per spec.seed."""
    total = spec.n_profiles + spec.n_holdout
    if spec.n_name_tokens**2 < total:
        raise VocabOverflow(
            f"{spec.n_name_tokens}^2 name combinations < {total} profiles"
        )
    layout = layout_for(spec)
    name_rng = SeededRng(derive_seed(spec.seed, "names"))
    combos = [
        [layout.name_start + a, layout.name_start + b]
        for a in range(spec.n_name_tokens)
        for b in range(spec.n_name_tokens)
    ]
    name_rng.shuffle(combos)

    profiles = []
    for pid in range(total):
        rng = SeededRng(derive_seed(spec.seed, "profile", pid))
        feature = rng.normal_array((spec.feature_dim,))
        attributes = [
            [layout.value_start + rng.randint(spec.n_value_tokens) for _ in range(2)]
            for _ in range(spec.n_attributes)
        ]
        profiles.append(
            Profile(
                id=pid,
                holdout=pid >= spec.n_profiles,
                feature=feature,
                name_tokens=combos[pid],
                attributes=attributes,
            )
        )
    return profiles


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def choose_split_profiles(spec: BenchSpec) -> tuple[set[int], set[int]]:
    """(forget profile ids, retain-few profile ids), disjoint, seeded."""
    n_forget = _round_half_up(spec.forget_ratio * spec.n_profiles)
    if 2 * n_forget > spec.n_profiles:
        raise RatioTooLarge(
            f"{n_forget} forget + {n_forget} retain-few profiles exceed {spec.n_profiles}"
        )
    ids = list(range(spec.n_profiles))
    rng = SeededRng(derive_seed(spec.seed, "splits"))
    rng.shuffle(ids)
    return set(ids[:n_forget]), set(ids[n_forget : 2 * n_forget])


def _variant_fillers(spec: BenchSpec, layout: VocabLayout, *tags) -> list[int]:
    """One filler token per variant, distinct within the item group.

    Variant 0 (the training variant) always takes the first filler token,
    so the training templates are fixed and the filler slot carries no
    information the model could key on.  Evaluation variants draw from
    the remaining filler tokens, which never occur in training data:
    rephrasings are genuinely out-of-template.
    """
    rng = SeededRng(derive_seed(spec.seed, "fillers", *tags))
    eval_tokens = [layout.filler_start + t for t in range(1, spec.n_filler_tokens)]
    rng.shuffle(eval_tokens)
    return [layout.filler_start] + eval_tokens[: spec.n_variants - 1]


def build_qa(
    profiles: list[Profile], spec: BenchSpec, pool: RefusalPool
) -> list[QAItem]:
    """All QA items with split tags; variant 0 trains, variants >= 1 evaluate.

    Surface variants change only the filler token.  Holdout profiles get
    understanding items only: they are held out of the memorization
    corpus, not of training as such, so evaluating them probes whether
    understanding survives on profiles with no memorized attributes.
    """
    layout = layout_for(spec)
    pool_seqs = {tuple(s) for s in pool.sequences}
    forget_ids, retain_few_ids = choose_split_profiles(spec)

    def memory_split(pid: int) -> str:
        if pid in forget_ids:
            return SPLIT_FORGET
        if pid in retain_few_ids:
            return SPLIT_RETAIN_FEW
        return SPLIT_RETAIN

    def understanding_items(p: Profile, split: str) -> list[QAItem]:
        out = []
        for j in range(spec.n_understanding):
            answer = [bucket(p.feature[j], layout)]
            fillers = _variant_fillers(spec, layout, p.id, "und", j)
            key = layout.comp_token(j)
            for v in range(spec.n_variants):
                out.append(
                    QAItem(
                        profile_id=p.id,
                        category=CATEGORY_UNDERSTANDING,
                        split=split,
                        variant=v,
                        feature=p.feature,
                        question=[layout.marker_understanding] + [key] * 4 + [fillers[v]],
                        answer=answer,
                    )
                )
        return out

    items: list[QAItem] = []
    for p in profiles:
        if p.holdout:
            items.extend(understanding_items(p, SPLIT_HOLDOUT))
            continue

        mem_split = memory_split(p.id)
        und_split = SPLIT_FORGET if p.id in forget_ids else SPLIT_RETAIN
        for k in range(spec.n_attributes):
            answer = p.attributes[k]
            if tuple(answer) in pool_seqs:
                raise VocabOverflow("attribute answer collides with the refusal pool")
            key = layout.attr_token(k)
            fillers = _variant_fillers(spec, layout, p.id, "img", k)
            for v in range(spec.n_variants):
                items.append(
                    QAItem(
                        profile_id=p.id,
                        category=CATEGORY_IMAGE_MEMORY,
                        split=mem_split,
                        variant=v,
                        feature=p.feature,
                        question=[layout.marker_image] + [key] * 4 + [fillers[v]],
                        answer=answer,
                    )
                )
            fillers = _variant_fillers(spec, layout, p.id, "txt", k)
            for v in range(spec.n_variants):
                items.append(
                    QAItem(
                        profile_id=p.id,
                        category=CATEGORY_TEXT_MEMORY,
                        split=mem_split,
                        variant=v,
                        feature=None,
                        question=[layout.marker_text, key, key]
                        + list(p.name_tokens) * 2
                        + [fillers[v]],
                        answer=answer,
                    )
                )
        items.extend(understanding_items(p, und_split))
    return items


def split_sets(items: list[QAItem], spec: BenchSpec) -> dict[str, list[QAItem]]:
    """Variant-0 training-side partition.

    Returns D_f and D_r_few (the unlearning inputs), the full retain
    memory set D_r (retain-few included), the understanding set D_u over
    all profiles, and the holdout items.
    """
    d_f = [
        i
        for i in items
        if i.category in MEMORY_CATEGORIES and i.split == SPLIT_FORGET and i.variant == 0
    ]
    d_r_few = [
        i
        for i in items
        if i.category in MEMORY_CATEGORIES and i.split == SPLIT_RETAIN_FEW and i.variant == 0
    ]
    d_r = [
        i
        for i in items
        if i.category in MEMORY_CATEGORIES
        and i.split in (SPLIT_RETAIN, SPLIT_RETAIN_FEW)
        and i.variant == 0
    ]
    d_u = [i for i in items if i.category == CATEGORY_UNDERSTANDING and i.variant == 0]
    holdout = [i for i in items if i.split == SPLIT_HOLDOUT]

    forget_profiles = {i.profile_id for i in d_f}
    retain_profiles = {i.profile_id for i in d_r}
    if forget_profiles & retain_profiles:
        raise RatioTooLarge("forget and retain profiles overlap")
    if len(d_r_few) != len(d_f):
        raise RatioTooLarge(
            f"retain-few size {len(d_r_few)} != forget size {len(d_f)}"
        )
    return {
        "forget": d_f,
        "retain_few": d_r_few,
        "retain": d_r,
        "understanding": d_u,
        "holdout": holdout,
    }


def training_items(items: list[QAItem]) -> list[QAItem]:
    """All variant-0 items: the original model's train set.

    Holdout profiles contribute their understanding items (they carry no
    memory items at all); holdout rows therefore measure understanding
    on profiles outside the memorization corpus.
    """
    return [i for i in items if i.variant == 0]


def make_refusal_set(
    d_f: list[QAItem], pool: RefusalPool, seed: int
) -> list[QAItem]:
    """Copy of the forget items with answers replaced by sampled refusals."""
    if not pool.sequences:
        raise EmptyPool("refusal pool is empty")
    rng = SeededRng(derive_seed(seed, "refusal_labels"))
    out = []
    for item in d_f:
        label = list(pool.sequences[rng.randint(len(pool.sequences))])
        out.append(
            QAItem(
                profile_id=item.profile_id,
                category=item.category,
                split=item.split,
                variant=item.variant,
                feature=item.feature,
                question=list(item.question),
                answer=label,
            )
        )
    return out


# -- dataset files ------------------------------------------------------


def _item_to_record(item: QAItem) -> dict:
    return {
        "profile": item.profile_id,
        "category": item.category,
        "split": item.split,
        "variant": item.variant,
        "feature": None if item.feature is None else [float(x) for x in item.feature],
        "question": list(item.question),
        "answer": list(item.answer),
    }


def _record_to_item(rec: dict) -> QAItem:
    feature = rec["feature"]
    return QAItem(
        profile_id=int(rec["profile"]),
        category=rec["category"],
        split=rec["split"],
        variant=int(rec["variant"]),
        feature=None if feature is None else np.asarray(feature, dtype=np.float64),
        question=[int(t) for t in rec["question"]],
        answer=[int(t) for t in rec["answer"]],
    )


def write_dataset(path: str | Path, items: list[QAItem]) -> None:
    lines = [
        json.dumps(_item_to_record(i), sort_keys=True, separators=(",", ":"))
        for i in items
    ]
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_dataset(path: str | Path) -> list[QAItem]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return [_record_to_item(json.loads(line)) for line in text.splitlines() if line]


def write_sidecar(
    path: str | Path, spec: BenchSpec, layout: VocabLayout, pool: RefusalPool
) -> None:
    payload = {
        "bench_spec": spec.to_dict(),
        "vocab_layout": layout.to_dict(),
        "refusal_pool": pool.sequences,
    }
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(
            json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
        )
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_sidecar(path: str | Path) -> tuple[BenchSpec, VocabLayout, RefusalPool]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    spec = BenchSpec.from_dict(payload["bench_spec"])
    layout = VocabLayout.from_dict(payload["vocab_layout"])
    pool = RefusalPool(sequences=[list(s) for s in payload["refusal_pool"]])
    return spec, layout, pool
