"""Training objectives: detection, association, relation and contrastive losses.

All losses are plain functions returning floats. The elementwise sigmoid
cross-entropy also exposes its analytic gradient.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .matching import MatchAssignment, hungarian_match  # noqa: F401  (re-exported)
from .model.ops import DetectionOutput
from .tensor import DimensionError, NumericError, as_matrix, sigmoid

PROB_EPS = 1e-7
DICE_EPS = 1.0


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 2.0
    lambda_no_object: float = 0.1
    lambda_ce: float = 5.0
    lambda_dice: float = 5.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.8
    eta: float = 0.6
    pos_weight: float | None = None  # None -> entries/positives, clamped to [1, 100]

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value is not None and value < 0:
                raise ValueError(f"loss weight {name} must be nonnegative, got {value}")


@dataclass(frozen=True)
class LossReport:
    l_obj: float
    l_ass: float
    l_rel: float
    l_cons: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def _same_shape(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


def _clamp(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


# -- elementwise losses ------------------------------------------------------

def sigmoid_ce_elementwise(logits, targets) -> np.ndarray:
    """``-[t log s(x) + (1-t) log(1-s(x))]`` per entry, via the stable softplus form."""
    x, t = as_matrix(logits, "logits"), as_matrix(targets, "targets")
    _same_shape(x, t, "sigmoid CE")
    return np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))


def sigmoid_ce_grad(logits, targets) -> np.ndarray:
    """Derivative of the elementwise loss with respect to each logit: ``s(x) - t``."""
    x, t = as_matrix(logits, "logits"), as_matrix(targets, "targets")
    _same_shape(x, t, "sigmoid CE")
    return sigmoid(x) - t


def sigmoid_ce(logits, targets) -> float:
    loss = sigmoid_ce_elementwise(logits, targets)
    return float(loss.mean()) if loss.size else 0.0


def dice_loss(pred_probs, gt, eps: float = DICE_EPS) -> float:
    p = np.asarray(pred_probs, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    _same_shape(p, g, "dice loss")
    return float(1.0 - (2.0 * (p * g).sum() + eps) / (p.sum() + g.sum() + eps))


def weighted_bce(pred, target, pos_weight: float = 1.0) -> float:
    p, t = as_matrix(pred, "predictions"), as_matrix(target, "targets")
    _same_shape(p, t, "weighted BCE")
    if np.isnan(p).any():
        raise NumericError("predictions contain NaN")
    if ((p < 0) | (p > 1)).any():
        raise ValueError("weighted BCE predictions must lie in [0, 1]")
    if p.size == 0:
        return 0.0
    p = _clamp(p)
    return float(np.mean(-(pos_weight * t * np.log(p) + (1.0 - t) * np.log(1.0 - p))))


def default_pos_weight(target) -> float:
    t = np.asarray(target)
    positives = int((t > 0).sum())
    if positives == 0:
        return 1.0
    return float(min(max(t.size / positives, 1.0), 100.0))


def association_loss(refined, gt_links, weights: LossWeights = LossWeights()) -> float:
    w = weights.pos_weight if weights.pos_weight is not None else default_pos_weight(gt_links)
    return weighted_bce(refined, gt_links, w)


def pair_loss(c, gt_pairs, pos_weight: float | None = None) -> float:
    """Weighted BCE on pair confidences, mapped from [-1, 1] to [0, 1] first."""
    c = as_matrix(c, "pair confidence")
    w = pos_weight if pos_weight is not None else default_pos_weight(gt_pairs)
    return weighted_bce((c + 1.0) / 2.0, gt_pairs, w)


def info_nce(anchor, positives: Sequence, negatives: Sequence) -> float:
    """Sum over positives of ``-log(exp(x.y+) / (exp(x.y+) + sum exp(x.y-)))``.

    Similarities are raw dot products, no temperature.
    """
    if len(positives) == 0:
        raise ValueError("InfoNCE needs at least one positive")
    x = np.asarray(anchor, dtype=np.float64).ravel()
    pos = np.atleast_2d(np.asarray(positives, dtype=np.float64)) @ x
    neg = (np.atleast_2d(np.asarray(negatives, dtype=np.float64)) @ x) if len(negatives) else np.zeros(0)
    total = 0.0
    for s in pos:
        diffs = neg - s
        if diffs.size == 0:
            continue
        top = diffs.max()
        if top <= 0:
            total += float(np.log1p(np.exp(diffs).sum()))
        else:
            # log(1 + sum e^d) = top + log(e^-top + sum e^(d - top))
            total += float(top + np.log(np.exp(-top) + np.exp(diffs - top).sum()))
    return total


def text_contrastive_loss(text_queries, other_queries, gt_links, num_negatives: int | None = None,
                          rng: np.random.Generator | None = None) -> float:
    """Text-anchored InfoNCE over associated (positive) and unassociated (negative) queries.

    ``gt_links[i, j] = 1`` marks other-modality query ``j`` as a positive for
    text query ``i``. ``num_negatives`` caps the negatives sampled per anchor.
    """
    tq, oq = as_matrix(text_queries, "text queries"), as_matrix(other_queries, "other queries")
    gt = as_matrix(gt_links, "gt links")
    if gt.shape != (tq.shape[0], oq.shape[0]):
        raise DimensionError(f"gt links {gt.shape} do not fit {tq.shape[0]}x{oq.shape[0]} queries")
    total = 0.0
    for i in range(tq.shape[0]):
        pos = np.flatnonzero(gt[i] > 0)
        if pos.size == 0:
            continue
        neg = np.flatnonzero(gt[i] <= 0)
        if num_negatives is not None and neg.size > num_negatives:
            rng = rng if rng is not None else np.random.default_rng(0)
            neg = np.sort(rng.choice(neg, size=num_negatives, replace=False))
        total += info_nce(tq[i], oq[pos], oq[neg])
    return total


# -- composite losses --------------------------------------------------------

def _gt_mask_matrix(gt_masks, n_pixels: int) -> np.ndarray:
    gt = np.asarray(gt_masks, dtype=np.float64)
    if gt.size == 0:
        return np.zeros((0, n_pixels))
    gt = gt.reshape(gt.shape[0], -1)
    if gt.shape[1] != n_pixels:
        raise DimensionError(f"ground-truth masks have {gt.shape[1]} pixels, predictions {n_pixels}")
    return gt


def match_cost(det: DetectionOutput, gt_labels: Sequence[int], gt_masks,
               weights: LossWeights = LossWeights()) -> np.ndarray:
    """Query x ground-truth cost: class NLL + mask BCE + mask dice, each weighted."""
    logits = as_matrix(det.class_logits, "class logits")
    mask_logits = as_matrix(det.mask_logits, "mask logits")
    n_q, n_pix = mask_logits.shape
    gt = _gt_mask_matrix(gt_masks, n_pix)
    if gt.shape[0] != len(gt_labels):
        raise DimensionError(f"{len(gt_labels)} labels for {gt.shape[0]} ground-truth masks")
    cost = np.zeros((n_q, len(gt_labels)))
    probs = sigmoid(mask_logits)
    for j, label in enumerate(gt_labels):
        cls = -np.log(_clamp(sigmoid(logits[:, label])))
        target = np.broadcast_to(gt[j], mask_logits.shape)
        bce = sigmoid_ce_elementwise(mask_logits, target).mean(axis=1) if n_pix else np.zeros(n_q)
        dice = np.array([dice_loss(probs[i], gt[j]) for i in range(n_q)])
        cost[:, j] = weights.lambda_cls * cls + weights.lambda_ce * bce + weights.lambda_dice * dice
    return cost


def object_loss(det: DetectionOutput, gt_labels: Sequence[int], gt_masks, assignment: MatchAssignment,
                weights: LossWeights = LossWeights()) -> float:
    """Classification over every query plus mask BCE/dice over matched pairs.

    Unmatched queries are supervised towards the "no object" class (last
    logit column) with the smaller ``lambda_no_object`` weight.
    """
    logits = as_matrix(det.class_logits, "class logits")
    mask_logits = as_matrix(det.mask_logits, "mask logits")
    n_q, n_cls = logits.shape
    gt = _gt_mask_matrix(gt_masks, mask_logits.shape[1])
    matched = dict(assignment.pairs)
    if (len(matched) != len(assignment.pairs) or len(set(matched.values())) != len(matched)
            or set(matched) & set(assignment.unmatched_queries)
            or set(matched) | set(assignment.unmatched_queries) != set(range(n_q))
            or any(not 0 <= j < len(gt_labels) for j in matched.values())):
        raise ValueError("assignment is not an injective cover of the queries")

    targets = np.zeros_like(logits)
    row_weight = np.full(n_q, weights.lambda_no_object)
    targets[:, n_cls - 1] = 1.0
    for i, j in matched.items():
        targets[i, n_cls - 1] = 0.0
        targets[i, gt_labels[j]] = 1.0
        row_weight[i] = weights.lambda_cls
    cls_term = float(np.mean(row_weight * sigmoid_ce_elementwise(logits, targets).mean(axis=1))) if n_q else 0.0

    if not matched:
        return cls_term
    ce = np.mean([sigmoid_ce(mask_logits[i], gt[j]) for i, j in matched.items()])
    probs = sigmoid(mask_logits)
    dice = np.mean([dice_loss(probs[i], gt[j]) for i, j in matched.items()])
    return float(cls_term + weights.lambda_ce * ce + weights.lambda_dice * dice)


def relation_loss(rel_logits, gt_predicates, c, gt_pairs, weights: LossWeights = LossWeights()) -> float:
    """Predicate sigmoid CE over the selected pairs plus the pair-confidence loss."""
    rel_logits = as_matrix(rel_logits, "relation logits")
    cls = sigmoid_ce(rel_logits, gt_predicates) if rel_logits.size else 0.0
    return float(cls + pair_loss(c, gt_pairs, weights.pos_weight))


def total_loss(l_obj: float, l_ass: float, l_rel: float, l_cons: float,
               weights: LossWeights = LossWeights()) -> LossReport:
    terms = (l_obj, l_ass, l_rel, l_cons)
    if any(np.isnan(t) for t in terms):
        raise NumericError("loss component is NaN")
    if not all(np.isfinite(t) for t in terms):
        raise NumericError("loss component is not finite")
    total = weights.alpha * l_obj + weights.beta * l_ass + weights.gamma * l_rel + weights.eta * l_cons
    return LossReport(float(l_obj), float(l_ass), float(l_rel), float(l_cons), float(total))
