"""Scoring math for every evaluation in the project.

Accuracy and binary F1 for link prediction, the mean pairwise embedding
similarity for concept-list answers, hit rate, Cohen's kappa for
inter-annotator agreement, and mean/stddev aggregation of expert ratings.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Sequence

from .embed import Embedder, cosine, embed_text
from .kgraph import canonicalize_concept


@dataclass
class MetricReport:
    metrics: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.metrics.items():
            if not math.isfinite(value):
                raise ValueError(f"metric {name!r} is not finite: {value}")

    def to_dict(self) -> dict:
        return {"metrics": dict(self.metrics), "counts": dict(self.counts)}


def binary_accuracy_f1(labels: Sequence[bool], preds: Sequence[bool]) -> dict[str, float]:
    """Accuracy and positive-class F1 over parallel boolean sequences.

    F1 is 0 by convention when there are no positives anywhere.
    """
    if len(labels) != len(preds):
        raise ValueError(f"length mismatch: {len(labels)} labels vs {len(preds)} predictions")
    if not labels:
        raise ValueError("cannot score empty input")
    tp = sum(1 for y, p in zip(labels, preds) if y and p)
    tn = sum(1 for y, p in zip(labels, preds) if not y and not p)
    fp = sum(1 for y, p in zip(labels, preds) if not y and p)
    fn = sum(1 for y, p in zip(labels, preds) if y and not p)
    accuracy = (tp + tn) / len(labels)
    denom = 2 * tp + fp + fn
    f1 = (2 * tp / denom) if denom else 0.0
    return {"accuracy": accuracy, "f1": f1}


def similarity_score(pred: Sequence[str], gold: Sequence[str], embedder: Embedder) -> float:
    """Mean pairwise cosine similarity between predicted and gold concepts."""
    if not pred or not gold:
        raise ValueError("similarity_score needs non-empty concept lists")
    pred_vecs = [embed_text(embedder, c) for c in pred]
    gold_vecs = [embed_text(embedder, c) for c in gold]
    total = 0.0
    for pv in pred_vecs:
        for gv in gold_vecs:
            total += cosine(pv, gv)
    return total / (len(pred_vecs) * len(gold_vecs))


def hit_rate(pred: Sequence[str], gold: Sequence[str]) -> float:
    """Fraction of gold concepts present in the prediction, canonical match."""
    if not gold:
        raise ValueError("hit_rate needs a non-empty gold list")
    pred_set = {canonicalize_concept(c).canonical for c in pred} if pred else set()
    gold_set = {canonicalize_concept(c).canonical for c in gold}
    return len(gold_set & pred_set) / len(gold_set)


def cohen_kappa(ratings_a: Sequence[Hashable], ratings_b: Sequence[Hashable]) -> float:
    """Unweighted Cohen's kappa between two raters."""
    if len(ratings_a) != len(ratings_b):
        raise ValueError(f"length mismatch: {len(ratings_a)} vs {len(ratings_b)}")
    if not ratings_a:
        raise ValueError("cannot compute kappa on empty input")
    n = len(ratings_a)
    p_o = sum(1 for a, b in zip(ratings_a, ratings_b) if a == b) / n
    freq_a = Counter(ratings_a)
    freq_b = Counter(ratings_b)
    p_e = sum(freq_a[c] * freq_b.get(c, 0) for c in freq_a) / (n * n)
    if p_e == 1.0:
        # both raters constant on the same category
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


@dataclass(frozen=True)
class RatingRecord:
    item_id: str
    rater_id: str
    concept_rating: int
    relation_rating: int

    def __post_init__(self):
        for name in ("concept_rating", "relation_rating"):
            value = getattr(self, name)
            if value not in (1, 2, 3):
                raise ValueError(f"{name} out of range 1..3: {value}")


def rating_summary(records: Sequence[RatingRecord]) -> dict[str, dict[str, float]]:
    """Pooled mean and population stddev per rating dimension."""
    if not records:
        raise ValueError("no rating records")
    out = {}
    for dim in ("concept", "relation"):
        values = [getattr(r, f"{dim}_rating") for r in records]
        mean = sum(values) / len(values)
        var = sum((v - mean) ** 2 for v in values) / len(values)
        out[dim] = {"mean": mean, "stddev": math.sqrt(var)}
    return out


def load_ratings_csv(path: str | Path) -> list[RatingRecord]:
    """Read rating rows ``item_id,rater_id,concept_rating,relation_rating``.

    A header row is detected and skipped when the rating columns are not
    integers.
    """
    records: list[RatingRecord] = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise ValueError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
            try:
                concept, relation = int(row[2]), int(row[3])
            except ValueError:
                if lineno == 1:
                    continue
                raise ValueError(f"{path}: line {lineno}: ratings must be integers") from None
            try:
                records.append(RatingRecord(row[0].strip(), row[1].strip(), concept, relation))
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    if not records:
        raise ValueError(f"{path}: no rating records")
    return records


def evaluate_ratings(records: Sequence[RatingRecord]) -> dict:
    """Summary used by the CLI: per-dimension mean/stddev plus two-rater kappa.

    Kappa is computed per dimension over items rated by exactly the same two
    raters; it is omitted when the pool does not have exactly two raters.
    """
    summary = rating_summary(records)
    raters = sorted({r.rater_id for r in records})
    result = {
        "concept": summary["concept"],
        "relation": summary["relation"],
        "n_records": len(records),
        "n_raters": len(raters),
    }
    if len(raters) == 2:
        by_rater = {
            rid: {r.item_id: r for r in records if r.rater_id == rid} for rid in raters
        }
        shared = sorted(set(by_rater[raters[0]]) & set(by_rater[raters[1]]))
        if shared:
            for dim in ("concept", "relation"):
                a = [getattr(by_rater[raters[0]][i], f"{dim}_rating") for i in shared]
                b = [getattr(by_rater[raters[1]][i], f"{dim}_rating") for i in shared]
                result[dim]["kappa"] = cohen_kappa(a, b)
            result["n_shared_items"] = len(shared)
    return result
