"""Strict entity-level evaluation: micro P/R/F1, token accuracy, per-type rows.

A predicted span counts only when its type, start, end, and sentence all
match a gold span exactly. Counts are pooled over every sentence before the
ratios are taken (micro-averaging).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .corpus import EntitySpan, extract_entities

__all__ = [
    "TypeMetrics",
    "MetricsReport",
    "strict_match_prf",
    "token_accuracy",
    "per_type_report",
    "evaluate_labels",
]


def _prf(n_correct: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = n_correct / n_pred if n_pred else 0.0
    r = n_correct / n_gold if n_gold else 0.0
    f1 = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


@dataclass(frozen=True)
class TypeMetrics:
    precision: float
    recall: float
    f1: float
    n_gold: int
    n_pred: int
    n_correct: int

    @property
    def has_support(self) -> bool:
        return self.n_gold > 0 or self.n_pred > 0


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    n_gold: int
    n_pred: int
    n_correct: int
    token_accuracy: float | None = None
    per_type: dict[str, TypeMetrics] = field(default_factory=dict)

    def format_table(self) -> str:
        lines = [
            f"{'micro':<12} P={self.precision:7.4f} R={self.recall:7.4f} "
            f"F1={self.f1:7.4f}  (gold={self.n_gold} pred={self.n_pred} "
            f"correct={self.n_correct})"
        ]
        if self.token_accuracy is not None:
            lines.append(f"{'accuracy':<12} {self.token_accuracy:7.4f}")
        for name in sorted(self.per_type):
            tm = self.per_type[name]
            note = "" if tm.has_support else "  [no support]"
            lines.append(
                f"{name:<12} P={tm.precision:7.4f} R={tm.recall:7.4f} "
                f"F1={tm.f1:7.4f}{note}"
            )
        return "\n".join(lines)

    def to_records(self) -> list[dict]:
        records = [
            {
                "scope": "micro",
                "precision": self.precision,
                "recall": self.recall,
                "f1": self.f1,
                "n_gold": self.n_gold,
                "n_pred": self.n_pred,
                "n_correct": self.n_correct,
                "token_accuracy": self.token_accuracy,
            }
        ]
        for name in sorted(self.per_type):
            tm = self.per_type[name]
            records.append(
                {
                    "scope": name,
                    "precision": tm.precision,
                    "recall": tm.recall,
                    "f1": tm.f1,
                    "n_gold": tm.n_gold,
                    "n_pred": tm.n_pred,
                    "n_correct": tm.n_correct,
                }
            )
        return records


def strict_match_prf(
    gold: Iterable[EntitySpan],
    pred: Iterable[EntitySpan],
    label_inventory: Iterable[str] | None = None,
) -> MetricsReport:
    """Micro P/R/F1 under exact (type, start, end, sentence) matching.

    Duplicate predicted spans are deduplicated before matching. An empty
    prediction set scores precision 0 by convention.
    """
    gold_set = set(gold)
    pred_set = set(pred)
    correct = len(gold_set & pred_set)
    p, r, f1 = _prf(correct, len(pred_set), len(gold_set))
    return MetricsReport(
        precision=p,
        recall=r,
        f1=f1,
        n_gold=len(gold_set),
        n_pred=len(pred_set),
        n_correct=correct,
        per_type=per_type_report(gold_set, pred_set, label_inventory),
    )


def token_accuracy(
    gold_labels: list[list[str]],
    pred_labels: list[list[str]],
    include_o: bool = True,
) -> float:
    """Fraction of token positions labeled identically.

    The O label counts by default; ``include_o=False`` restricts the
    denominator to positions whose gold label is an entity tag.
    """
    if len(gold_labels) != len(pred_labels):
        raise ValueError(
            f"{len(gold_labels)} gold sentences vs {len(pred_labels)} predicted"
        )
    hits = total = 0
    for i, (g, p) in enumerate(zip(gold_labels, pred_labels)):
        if len(g) != len(p):
            raise ValueError(f"sentence {i}: {len(g)} gold labels vs {len(p)}")
        for gl, pl in zip(g, p):
            if not include_o and gl == "O":
                continue
            total += 1
            hits += gl == pl
    return hits / total if total else 0.0


def per_type_report(
    gold: Iterable[EntitySpan],
    pred: Iterable[EntitySpan],
    label_inventory: Iterable[str] | None = None,
) -> dict[str, TypeMetrics]:
    """One P/R/F1 row per entity type, restricting both span sets to it."""
    gold_set = set(gold)
    pred_set = set(pred)
    types = set(label_inventory or [])
    types |= {s.type for s in gold_set} | {s.type for s in pred_set}
    rows: dict[str, TypeMetrics] = {}
    for name in sorted(types):
        g = {s for s in gold_set if s.type == name}
        q = {s for s in pred_set if s.type == name}
        correct = len(g & q)
        p, r, f1 = _prf(correct, len(q), len(g))
        rows[name] = TypeMetrics(p, r, f1, len(g), len(q), correct)
    return rows


def evaluate_labels(
    gold_labels: list[list[str]],
    pred_labels: list[list[str]],
    label_inventory: Iterable[str] | None = None,
    sentence_ids: list[str] | None = None,
) -> MetricsReport:
    """Score predicted BIO sequences against gold ones.

    Extracts spans from both sides (predictions get the lenient BIO
    interpretation) and attaches token accuracy.
    """
    ids = sentence_ids or [f"s{i:06d}" for i in range(len(gold_labels))]
    gold_spans = [
        s for labels, sid in zip(gold_labels, ids)
        for s in extract_entities(labels, sid)
    ]
    pred_spans = [
        s for labels, sid in zip(pred_labels, ids)
        for s in extract_entities(labels, sid)
    ]
    report = strict_match_prf(gold_spans, pred_spans, label_inventory)
    report.token_accuracy = token_accuracy(gold_labels, pred_labels)
    return report
