"""Metrics and per-split reports.

ROUGE-L is sequence-level LCS with the balanced (beta = 1) F-measure.
Exact match and the well-formedness rate stand in for judged factuality
and coherence: answers here are closed-vocabulary token sequences, so
both are fully deterministic.  Reports carry one row per populated
(split, category) pair in lexicographic order; the JSON form is
canonical (sorted keys, floats rendered %.6f) so identical runs produce
identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .datagen import (
    CATEGORY_UNDERSTANDING,
    MEMORY_CATEGORIES,
    SPLIT_RETAIN,
    SPLIT_RETAIN_FEW,
    QAItem,
    RefusalPool,
    VocabLayout,
)
from .errors import IoError, LengthMismatch, SchemaMismatch
from .model.network import PAD_TOKEN, ModelConfig, ModelWeights, predict_batch

METRIC_NAMES = (
    "rouge_l_f1",
    "exact_match",
    "token_accuracy",
    "refusal_rate",
    "wellformed_rate",
)

CSV_HEADER = "split,category,n,rouge_l_f1,exact,token,refusal,wellformed"


def lcs_length(a: Sequence[int], b: Sequence[int]) -> int:
    """Classic O(len(a)*len(b)) dynamic program."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def rouge_l(candidate: Sequence[int], reference: Sequence[int]) -> RougeScore:
    """LCS-based P/R/F1; any empty sequence scores all zeros."""
    if not candidate or not reference:
        return RougeScore(0.0, 0.0, 0.0)
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return RougeScore(0.0, 0.0, 0.0)
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return RougeScore(p, r, 2.0 * p * r / (p + r))


def refusal_rate(
    predictions: Sequence[Sequence[int]], refuse_start_tokens: Iterable[int]
) -> float:
    """Fraction of predictions whose first token is a refusal starter."""
    starts = set(refuse_start_tokens)
    if not predictions:
        return 0.0
    hits = sum(1 for p in predictions if p and p[0] in starts)
    return hits / len(predictions)


def _strip_pad(seq: Sequence[int]) -> list[int]:
    out = list(seq)
    while out and out[-1] == PAD_TOKEN:
        out.pop()
    return out


def accuracy(
    predictions: Sequence[Sequence[int]], references: Sequence[Sequence[int]]
) -> tuple[float, float]:
    """(exact_match, token_accuracy) over PAD-stripped sequences.

    Token accuracy scores matches over the overlapping positions against
    the longer length, so missing or surplus positions count as wrong;
    two empty sequences count as a full match.
    """
    if len(predictions) != len(references):
        raise LengthMismatch(
            f"{len(predictions)} predictions vs {len(references)} references"
        )
    if not predictions:
        return 0.0, 0.0
    exact = 0
    token_total = 0.0
    for pred, ref in zip(predictions, references):
        p = _strip_pad(pred)
        r = _strip_pad(ref)
        if p == r:
            exact += 1
        longest = max(len(p), len(r))
        if longest == 0:
            token_total += 1.0
        else:
            matches = sum(1 for x, y in zip(p, r) if x == y)
            token_total += matches / longest
    return exact / len(predictions), token_total / len(predictions)


def is_wellformed(
    prediction: Sequence[int], layout: VocabLayout, pool: RefusalPool
) -> bool:
    """Pool refusal, or single-category tokens with PADs only as a suffix.

    Categories are the three answer sub-vocabularies: attribute values,
    quartile buckets, refusal tokens.  The empty (all-PAD) prediction is
    degenerate and counts as not well-formed.
    """
    seq = list(prediction)
    stripped = _strip_pad(seq)
    if not stripped:
        return False
    if len(stripped) != len([t for t in seq if t != PAD_TOKEN]):
        return False  # interior PAD
    if stripped in ([list(s) for s in pool.sequences]):
        return True
    for vocab in (layout.value_tokens, layout.bucket_tokens, layout.refusal_tokens):
        if all(t in vocab for t in stripped):
            return True
    return False


def wellformed_rate(
    predictions: Sequence[Sequence[int]], layout: VocabLayout, pool: RefusalPool
) -> float:
    if not predictions:
        return 0.0
    hits = sum(1 for p in predictions if is_wellformed(p, layout, pool))
    return hits / len(predictions)


# -- reports -------------------------------------------------------------


@dataclass
class MetricRow:
    split: str
    category: str
    n_items: int
    rouge_l_f1: float
    exact_match: float
    token_accuracy: float
    refusal_rate: float
    wellformed_rate: float
    rouge_l_precision: float = 0.0
    rouge_l_recall: float = 0.0


@dataclass
class EvalReport:
    rows: list[MetricRow]
    manifest: dict = field(default_factory=dict)

    def row(self, split: str, category: str) -> MetricRow:
        for r in self.rows:
            if r.split == split and r.category == category:
                return r
        raise KeyError(f"no row for ({split}, {category})")

    def get(self, split: str, category: str, metric: str) -> float:
        return getattr(self.row(split, category), metric)


def evaluate_model(
    weights: ModelWeights,
    config: ModelConfig,
    items: list[QAItem],
    layout: VocabLayout,
    pool: RefusalPool,
    manifest: dict | None = None,
) -> EvalReport:
    """Predict on all evaluation variants (variant >= 1), grouped rows.

    Retain-few items report under the retain split; understanding rows
    cover all profiles including holdout.
    """
    eval_items = [i for i in items if i.variant >= 1]
    groups: dict[tuple[str, str], list[QAItem]] = {}
    for item in eval_items:
        split = SPLIT_RETAIN if item.split == SPLIT_RETAIN_FEW else item.split
        groups.setdefault((split, item.category), []).append(item)

    rows = []
    zero = np.zeros(config.feature_dim, dtype=np.float64)
    for (split, category) in sorted(groups):
        batch = groups[(split, category)]
        features = np.stack(
            [i.feature if i.feature is not None else zero for i in batch]
        )
        predictions = predict_batch(weights, config, features, [i.question for i in batch])
        references = [i.answer for i in batch]
        exact, token = accuracy(predictions, references)
        scores = [rouge_l(p, _strip_pad(r)) for p, r in zip(predictions, references)]
        rows.append(
            MetricRow(
                split=split,
                category=category,
                n_items=len(batch),
                rouge_l_f1=float(np.mean([s.f1 for s in scores])),
                exact_match=exact,
                token_accuracy=token,
                refusal_rate=refusal_rate(predictions, layout.refuse_start_tokens),
                wellformed_rate=wellformed_rate(predictions, layout, pool),
                rouge_l_precision=float(np.mean([s.precision for s in scores])),
                rouge_l_recall=float(np.mean([s.recall for s in scores])),
            )
        )
    return EvalReport(rows=rows, manifest=dict(manifest or {}))


# -- canonical serialization ----------------------------------------------


def _canonical_json(obj) -> str:
    """JSON with sorted keys and every float rendered as %.6f."""
    if isinstance(obj, dict):
        parts = ",".join(
            f"{json.dumps(str(k))}:{_canonical_json(obj[k])}" for k in sorted(obj)
        )
        return "{" + parts + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_canonical_json(v) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return "%.6f" % (obj + 0.0)  # normalizes -0.0
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    return json.dumps(obj)


def _row_to_dict(row: MetricRow) -> dict:
    return {
        "split": row.split,
        "category": row.category,
        "n_items": row.n_items,
        "rouge_l_f1": row.rouge_l_f1,
        "rouge_l_precision": row.rouge_l_precision,
        "rouge_l_recall": row.rouge_l_recall,
        "exact_match": row.exact_match,
        "token_accuracy": row.token_accuracy,
        "refusal_rate": row.refusal_rate,
        "wellformed_rate": row.wellformed_rate,
        # reserved for judged scoring, unused at desk scale
        "fact_score": None,
        "meaningful_score": None,
    }


def report_to_json(report: EvalReport) -> str:
    payload = {
        "manifest": report.manifest,
        "rows": [_row_to_dict(r) for r in report.rows],
    }
    return _canonical_json(payload)


def report_to_csv(report: EvalReport) -> str:
    lines = [CSV_HEADER]
    for r in report.rows:
        lines.append(
            f"{r.split},{r.category},{r.n_items},"
            f"{r.rouge_l_f1:.6f},{r.exact_match:.6f},{r.token_accuracy:.6f},"
            f"{r.refusal_rate:.6f},{r.wellformed_rate:.6f}"
        )
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, path: str | Path, fmt: str = "json") -> None:
    if fmt == "json":
        text = report_to_json(report)
    elif fmt == "csv":
        text = report_to_csv(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(text.encode("utf-8"))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_report(path: str | Path) -> EvalReport:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    rows = [
        MetricRow(
            split=r["split"],
            category=r["category"],
            n_items=int(r["n_items"]),
            rouge_l_f1=float(r["rouge_l_f1"]),
            exact_match=float(r["exact_match"]),
            token_accuracy=float(r["token_accuracy"]),
            refusal_rate=float(r["refusal_rate"]),
            wellformed_rate=float(r["wellformed_rate"]),
            rouge_l_precision=float(r.get("rouge_l_precision", 0.0)),
            rouge_l_recall=float(r.get("rouge_l_recall", 0.0)),
        )
        for r in payload["rows"]
    ]
    return EvalReport(rows=rows, manifest=payload.get("manifest", {}))


def diff_reports(a: EvalReport, b: EvalReport) -> EvalReport:
    """Metric-wise a - b over rows joined on (split, category)."""
    keys_a = {(r.split, r.category) for r in a.rows}
    keys_b = {(r.split, r.category) for r in b.rows}
    if keys_a != keys_b:
        raise SchemaMismatch(f"report rows differ: {sorted(keys_a ^ keys_b)}")
    rows = []
    for ra in a.rows:
        rb = b.row(ra.split, ra.category)
        rows.append(
            MetricRow(
                split=ra.split,
                category=ra.category,
                n_items=ra.n_items - rb.n_items,
                rouge_l_f1=ra.rouge_l_f1 - rb.rouge_l_f1,
                exact_match=ra.exact_match - rb.exact_match,
                token_accuracy=ra.token_accuracy - rb.token_accuracy,
                refusal_rate=ra.refusal_rate - rb.refusal_rate,
                wellformed_rate=ra.wellformed_rate - rb.wellformed_rate,
                rouge_l_precision=ra.rouge_l_precision - rb.rouge_l_precision,
                rouge_l_recall=ra.rouge_l_recall - rb.rouge_l_recall,
            )
        )
    return EvalReport(rows=rows, manifest={"diff": True})


def memory_rows(report: EvalReport, split: str) -> list[MetricRow]:
    return [r for r in report.rows if r.split == split and r.category in MEMORY_CATEGORIES]


def understanding_rows(report: EvalReport) -> list[MetricRow]:
    return [r for r in report.rows if r.category == CATEGORY_UNDERSTANDING]
