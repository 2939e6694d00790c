"""Mapping-quality metrics: tree accuracy, per-category F1/IoU, corpus rates.

Tree accuracy compares the prediction and the ground truth as keyed id sets:
over the union of category keys, each key scores the Jaccard similarity of its
two id sets (a key missing on one side contributes an empty set; a key whose
union is empty scores 0), and the final score is the mean over keys. This is
the fine-grained structural metric; F1 and IoU are reported per category, and
classification rates (hallucinated, malformed) are reported over the corpus.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from . import cvem

# Short labels for the three canonical categories, as reported.
CATEGORY_LABELS = {
    "exploitation_techniques": "ET",
    "primary_impacts": "PI",
    "secondary_impacts": "SI",
}

AGGREGATION_MACRO = "macro"
AGGREGATION_MICRO = "micro"


@dataclass(frozen=True)
class CategorizedIdSets:
    """Technique-id sets keyed by category; the unit both metrics operate on."""

    by_key: Mapping[str, frozenset[str]]

    @classmethod
    def from_dict(cls, d: Mapping[str, Iterable[str]]) -> "CategorizedIdSets":
        return cls({k: frozenset(v) for k, v in d.items()})

    def get(self, key: str) -> frozenset[str]:
        return self.by_key.get(key, frozenset())

    def keys(self) -> frozenset[str]:
        return frozenset(self.by_key.keys())

    def collapsed(self) -> "CategorizedIdSets":
        """Sub-technique ids collapsed to their parents (optional preprocessing)."""
        return CategorizedIdSets(
            {k: frozenset(tid.split(".")[0] for tid in v) for k, v in self.by_key.items()}
        )


def _as_sets(value: CategorizedIdSets | Mapping) -> CategorizedIdSets:
    if isinstance(value, CategorizedIdSets):
        return value
    return CategorizedIdSets.from_dict(value)


def ast_accuracy(m: CategorizedIdSets | Mapping, g: CategorizedIdSets | Mapping) -> float:
    """Mean per-key Jaccard similarity over the union of keys of both sides.

    Empty-union keys score 0 (including a key present on both sides with empty
    sets); no keys at all scores 0.
    """
    m, g = _as_sets(m), _as_sets(g)
    keys = m.keys() | g.keys()
    if not keys:
        return 0.0
    total = 0.0
    for k in keys:
        intersection = m.get(k) & g.get(k)
        union = m.get(k) | g.get(k)
        total += len(intersection) / len(union) if union else 0.0
    return total / len(keys)


def category_f1(pred: Iterable[str], gt: Iterable[str]) -> float:
    pred, gt = frozenset(pred), frozenset(gt)
    if not pred or not gt:
        return 0.0
    intersection = len(pred & gt)
    precision = intersection / len(pred)
    recall = intersection / len(gt)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def category_iou(pred: Iterable[str], gt: Iterable[str]) -> float:
    pred, gt = frozenset(pred), frozenset(gt)
    union = pred | gt
    if not union:
        return 0.0
    return len(pred & gt) / len(union)


@dataclass(frozen=True)
class ScoredRow:
    """One evaluated record: its output class, cleaned prediction, and gold sets.

    `predicted` is None exactly when the row is malformed.
    """

    classification: str
    predicted: Optional[CategorizedIdSets]
    gold: CategorizedIdSets


@dataclass(frozen=True)
class MetricsReport:
    ast_accuracy: float
    f1: Mapping[str, float]
    iou: Mapping[str, float]
    hallucination_rate: float
    error_rate: float
    counts: Mapping[str, int]
    aggregation: str = AGGREGATION_MACRO

    def to_dict(self) -> dict:
        return {
            "ast_accuracy": self.ast_accuracy,
            "f1": dict(self.f1),
            "iou": dict(self.iou),
            "hallucination_rate": self.hallucination_rate,
            "error_rate": self.error_rate,
            "counts": dict(self.counts),
            "aggregation": self.aggregation,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1)

    def to_table(self, label: str = "model") -> str:
        """Aligned text table mirroring the published layout: tree accuracy,
        then F1 and IoU per category, then the rates."""
        headers = (
            ["Model", "AST Accuracy"]
            + [f"F1 {c}" for c in CATEGORY_LABELS.values()]
            + [f"IoU {c}" for c in CATEGORY_LABELS.values()]
            + ["Halluc. Rate", "Error Rate"]
        )
        row = (
            [label, f"{self.ast_accuracy:.4f}"]
            + [f"{self.f1[c]:.4f}" for c in CATEGORY_LABELS.values()]
            + [f"{self.iou[c]:.4f}" for c in CATEGORY_LABELS.values()]
            + [f"{self.hallucination_rate:.4f}", f"{self.error_rate:.4f}"]
        )
        widths = [max(len(h), len(v)) for h, v in zip(headers, row)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        return fmt.format(*headers) + "\n" + fmt.format(*row)


def corpus_metrics(
    rows: Sequence[ScoredRow],
    aggregation: str = AGGREGATION_MACRO,
    collapse_subtechniques: bool = False,
    exclude_malformed: bool = False,
) -> MetricsReport:
    """Aggregate per-record scores into a corpus report.

    Default aggregation is the unweighted mean over records (macro), with
    malformed rows contributing 0 to every score; excluding them instead is
    configuration-visible but rewards refusal, so it is off by default.
    Classification rates always use the full corpus as denominator.
    """
    if not rows:
        raise ValueError("corpus_metrics requires at least one row")
    if aggregation not in (AGGREGATION_MACRO, AGGREGATION_MICRO):
        raise ValueError(f"unknown aggregation {aggregation!r}")

    counts = {"total": len(rows), "valid": 0, "hallucinated": 0, "malformed": 0}
    for row in rows:
        if row.classification not in counts:
            raise ValueError(f"unknown classification {row.classification!r}")
        counts[row.classification] += 1

    scored = rows if not exclude_malformed else [r for r in rows if r.classification != cvem.MALFORMED]

    def sets_for(row: ScoredRow) -> tuple[CategorizedIdSets, CategorizedIdSets]:
        pred = row.predicted if row.predicted is not None else CategorizedIdSets({})
        gold = row.gold
        if collapse_subtechniques:
            pred, gold = pred.collapsed(), gold.collapsed()
        return pred, gold

    f1: dict[str, float] = {}
    iou: dict[str, float] = {}
    if aggregation == AGGREGATION_MACRO:
        ast_total = 0.0
        for row in scored:
            pred, gold = sets_for(row)
            ast_total += ast_accuracy(pred, gold) if row.predicted is not None else 0.0
        ast = ast_total / len(scored) if scored else 0.0
        for key, label in CATEGORY_LABELS.items():
            f1_total = iou_total = 0.0
            for row in scored:
                pred, gold = sets_for(row)
                p = pred.get(key) if row.predicted is not None else frozenset()
                f1_total += category_f1(p, gold.get(key))
                iou_total += category_iou(p, gold.get(key))
            f1[label] = f1_total / len(scored) if scored else 0.0
            iou[label] = iou_total / len(scored) if scored else 0.0
    else:
        # Micro: pool the intersection/size counts across rows before dividing.
        key_score_sum = 0.0
        key_count = 0
        for row in scored:
            pred, gold = sets_for(row)
            keys = (pred.keys() | gold.keys()) if row.predicted is not None else gold.keys()
            key_count += len(keys)
            if row.predicted is not None:
                for k in keys:
                    union = pred.get(k) | gold.get(k)
                    key_score_sum += len(pred.get(k) & gold.get(k)) / len(union) if union else 0.0
        ast = key_score_sum / key_count if key_count else 0.0
        for key, label in CATEGORY_LABELS.items():
            inter = pred_n = gt_n = union_n = 0
            for row in scored:
                pred, gold = sets_for(row)
                p = pred.get(key) if row.predicted is not None else frozenset()
                g = gold.get(key)
                inter += len(p & g)
                pred_n += len(p)
                gt_n += len(g)
                union_n += len(p | g)
            precision = inter / pred_n if pred_n else 0.0
            recall = inter / gt_n if gt_n else 0.0
            f1[label] = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
            iou[label] = inter / union_n if union_n else 0.0

    total = counts["total"]
    return MetricsReport(
        ast_accuracy=ast,
        f1=f1,
        iou=iou,
        hallucination_rate=counts["hallucinated"] / total,
        error_rate=counts["malformed"] / total,
        counts=counts,
        aggregation=aggregation,
    )


def row_from_outputs(
    kb,
    raw: str,
    gold_mapping: cvem.CvemMapping,
    require_reason: bool = False,
    name_check: str = cvem.NAME_CHECK_STRICT,
) -> ScoredRow:
    """Classify one raw output against its gold mapping and build a ScoredRow."""
    classification, mapping, _ = cvem.evaluate_output(kb, raw, require_reason, name_check)
    predicted = None
    if mapping is not None:
        predicted = CategorizedIdSets.from_dict(cvem.scoreable_id_sets(kb, mapping, name_check))
    gold = CategorizedIdSets.from_dict(cvem.mapping_id_sets(gold_mapping))
    return ScoredRow(classification=classification, predicted=predicted, gold=gold)
