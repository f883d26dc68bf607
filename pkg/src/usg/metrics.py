"""Scene-graph metrics: R@K, mR@K, Set Match, triple-F1 and association accuracy@k.

Recall matching follows the usual SGDet protocol: predictions are visited in
descending score order and each consumes at most one ground-truth triplet.
Split-level recall pools hits over all samples (hits / gts), which makes mR@K
collapse to R@K when a single predicate class is present.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import MaskRegion
from .io import mask_from_dict, mask_to_dict
from .tensor import DimensionError, as_matrix


@dataclass(frozen=True)
class Triplet:
    subject: str
    predicate: str
    object: str
    score: float = 1.0
    subject_mask: MaskRegion | None = None
    object_mask: MaskRegion | None = None

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"triplet score must be finite, got {self.score}")
        if not self.subject or not self.object:
            raise ValueError("triplet labels must be nonempty")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.subject, self.predicate, self.object)

    @property
    def has_masks(self) -> bool:
        return self.subject_mask is not None and self.object_mask is not None

    @classmethod
    def from_dict(cls, d: Mapping) -> Triplet:
        sm, om = d.get("subject_mask"), d.get("object_mask")
        return cls(str(d["subject"]), str(d["predicate"]), str(d["object"]), float(d.get("score", 1.0)),
                   mask_from_dict(sm) if sm else None, mask_from_dict(om) if om else None)

    def to_dict(self) -> dict:
        out = {"subject": self.subject, "predicate": self.predicate, "object": self.object, "score": self.score}
        if self.subject_mask is not None:
            out["subject_mask"] = mask_to_dict(self.subject_mask)
        if self.object_mask is not None:
            out["object_mask"] = mask_to_dict(self.object_mask)
        return out


@dataclass(frozen=True)
class MetricReport:
    name: str
    k: int | None
    value: float | None
    breakdown: Mapping[str, float] = field(default_factory=dict)


def mask_iou(a: MaskRegion, b: MaskRegion) -> float:
    if a.kind != b.kind:
        raise ValueError(f"cannot compare {a.kind} with {b.kind} masks")
    if a.kind == "textspan":
        (s1, e1), (s2, e2) = a.span, b.span
        inter = max(0, min(e1, e2) - max(s1, s2))
        union = (e1 - s1) + (e2 - s2) - inter
        return inter / union if union > 0 else 0.0
    x, y = a.as_array(), b.as_array()
    if x.shape != y.shape:
        raise DimensionError(f"mask shapes differ: {x.shape} vs {y.shape}")
    union = int((x | y).sum())
    return int((x & y).sum()) / union if union else 0.0


def triplet_hit(pred: Triplet, gt: Triplet, iou_threshold: float = 0.5, use_masks: bool = True) -> bool:
    """Labels and predicate must agree; masks too when the ground truth has them."""
    if pred.key != gt.key:
        return False
    if not use_masks or not gt.has_masks:
        return True
    if not pred.has_masks:
        return False
    return (mask_iou(pred.subject_mask, gt.subject_mask) >= iou_threshold
            and mask_iou(pred.object_mask, gt.object_mask) >= iou_threshold)


def _ranked(preds: Sequence[Triplet]) -> list[Triplet]:
    return sorted(preds, key=lambda p: -p.score)  # stable


def matched_gts(preds: Sequence[Triplet], gts: Sequence[Triplet], k: int, iou_threshold: float = 0.5,
                use_masks: bool = True) -> list[int]:
    """Indices of ground-truth triplets hit within the top-k predictions."""
    used = [False] * len(gts)
    hits = []
    for p in _ranked(preds)[:max(k, 0)]:
        for j, g in enumerate(gts):
            if not used[j] and triplet_hit(p, g, iou_threshold, use_masks):
                used[j] = True
                hits.append(j)
                break
    return hits


def recall_at_k(preds: Sequence[Triplet], gts: Sequence[Triplet], k: int, iou_threshold: float = 0.5,
                use_masks: bool = True) -> float | None:
    """Fraction of ground truth hit in the top-k; ``None`` when there is no ground truth."""
    if not gts:
        return None
    return len(matched_gts(preds, gts, k, iou_threshold, use_masks)) / len(gts)


Sample = tuple[Sequence[Triplet], Sequence[Triplet]]  # (predictions, ground truth)


def split_recall_at_k(samples: Iterable[Sample], k: int, iou_threshold: float = 0.5,
                      use_masks: bool = True) -> MetricReport:
    hits = total = 0
    for preds, gts in samples:
        if not gts:
            continue
        hits += len(matched_gts(preds, gts, k, iou_threshold, use_masks))
        total += len(gts)
    return MetricReport(f"R@{k}", k, hits / total if total else None)


def mean_recall_at_k(samples: Iterable[Sample], k: int, iou_threshold: float = 0.5,
                     use_masks: bool = True) -> MetricReport:
    hits = defaultdict(int)
    totals = defaultdict(int)
    for preds, gts in samples:
        matched = set(matched_gts(preds, gts, k, iou_threshold, use_masks))
        for j, g in enumerate(gts):
            totals[g.predicate] += 1
            hits[g.predicate] += j in matched
    per_class = {p: hits[p] / totals[p] for p in sorted(totals)}
    value = sum(per_class.values()) / len(per_class) if per_class else None
    return MetricReport(f"mR@{k}", k, value, per_class)


def set_match(pred_triples: Iterable, gt_triples: Iterable) -> bool:
    return set(pred_triples) == set(gt_triples)


def triple_f1(pred_triples: Iterable, gt_triples: Iterable) -> float:
    """Exact-match triple F1 (SPICE without synonym matching); two empty sets score 1."""
    p, g = set(pred_triples), set(gt_triples)
    if not p and not g:
        return 1.0
    inter = len(p & g)
    if inter == 0:
        return 0.0
    precision, recall = inter / len(p), inter / len(g)
    return 2 * precision * recall / (precision + recall)


def split_set_match(pairs: Iterable[tuple[Iterable, Iterable]]) -> MetricReport:
    scores = [float(set_match(p, g)) for p, g in pairs]
    return MetricReport("SetMatch", None, sum(scores) / len(scores) if scores else None)


def split_triple_f1(pairs: Iterable[tuple[Iterable, Iterable]]) -> MetricReport:
    scores = [triple_f1(p, g) for p, g in pairs]
    return MetricReport("triple-F1", None, sum(scores) / len(scores) if scores else None)


def association_accuracy_at_k(refined, gt_links, k: int) -> float | None:
    """Share of rows with a true partner whose partner lands in the row's top-k.

    Rows are ranked by descending score, ties to the smaller column. Returns
    ``None`` when no row has a positive.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores, gt = as_matrix(refined, "association scores"), as_matrix(gt_links, "gt links")
    if scores.shape != gt.shape:
        raise DimensionError(f"scores {scores.shape} and gt links {gt.shape} differ")
    rows = [i for i in range(gt.shape[0]) if (gt[i] > 0).any()]
    if not rows:
        return None
    hits = 0
    for i in rows:
        top = np.argsort(-scores[i], kind="stable")[:k]
        hits += bool((gt[i, top] > 0).any())
    return hits / len(rows)


# -- prediction files --------------------------------------------------------

def load_samples(doc: Mapping) -> dict[str, list[Triplet]]:
    out = {}
    for s in doc.get("samples", []):
        sid = str(s["id"])
        if sid in out:
            raise ValueError(f"duplicate sample id {sid!r}")
        out[sid] = [Triplet.from_dict(t) for t in s.get("triplets", [])]
    return out


def evaluate(pred_doc: Mapping, gt_doc: Mapping, ks: Sequence[int] = (20, 50, 100), iou_threshold: float = 0.5,
             use_masks: bool = True) -> dict:
    """Report dict of metric -> value x 100 (two decimals); undefined metrics are omitted."""
    preds, gts = load_samples(pred_doc), load_samples(gt_doc)
    if set(preds) != set(gts):
        missing = sorted(set(gts) - set(preds))
        extra = sorted(set(preds) - set(gts))
        raise KeyError(f"sample ids differ (missing predictions: {missing}, unknown predictions: {extra})")
    ids = sorted(gts)
    samples = [(preds[i], gts[i]) for i in ids]
    report: dict = {}

    def put(name, value):
        if value is not None:
            report[name] = round(100.0 * value, 2)

    for k in ks:
        put(f"R@{k}", split_recall_at_k(samples, k, iou_threshold, use_masks).value)
        mr = mean_recall_at_k(samples, k, iou_threshold, use_masks)
        put(f"mR@{k}", mr.value)
        if mr.breakdown:
            report[f"mR@{k}/per_predicate"] = {p: round(100.0 * v, 2) for p, v in mr.breakdown.items()}
    triples = [({t.key for t in p}, {t.key for t in g}) for p, g in samples]
    put("SetMatch", split_set_match(triples).value)
    put("triple-F1", split_triple_f1(triples).value)
    return report
