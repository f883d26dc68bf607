"""Forward-pass mechanisms of the parser.

Each function is pure: it takes matrices/query sets plus a parameter view
and returns new arrays. Residual connections are plain additions, so zeroing
every value projection (and feed-forward output) turns each decoder into an
exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..graph import Modality
from ..matching import linear_assignment
from ..tensor import (
    NEG_INF,
    DimensionError,
    as_matrix,
    conv2d,
    cosine_matrix,
    matmul,
    relu,
    sigmoid,
    uniform_init,
)
from .config import ModelConfig
from .layers import MLP, Attention
from .params import AssociatorProjections, ConvLayer, MaskDecoderParams, Projector, RPCLayer, RelationLayer


@dataclass(frozen=True)
class QuerySet:
    modality: Modality
    queries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        object.__setattr__(self, "queries", as_matrix(self.queries, "queries"))

    def __len__(self) -> int:
        return self.queries.shape[0]

    @property
    def dim(self) -> int:
        return self.queries.shape[1]

    def replace(self, queries) -> QuerySet:
        return QuerySet(self.modality, queries)


@dataclass(frozen=True)
class AssociationMatrix:
    raw: np.ndarray
    refined: np.ndarray


@dataclass(frozen=True)
class DetectionOutput:
    class_logits: np.ndarray
    # one row of pre-sigmoid scores per query, flattened over pixels/points/tokens
    mask_logits: np.ndarray


@dataclass(frozen=True)
class RelationQuerySet:
    """``2k`` tokens: subjects in rows ``0..k-1``, their objects in rows ``k..2k-1``."""

    tokens: np.ndarray

    def __post_init__(self):
        if self.tokens.shape[0] % 2:
            raise DimensionError(f"relation tokens must come in pairs, got {self.tokens.shape[0]} rows")

    @property
    def num_pairs(self) -> int:
        return self.tokens.shape[0] // 2


# -- shared mask decoder -----------------------------------------------------

def init_queries(config: ModelConfig, modality, seed: int) -> QuerySet:
    modality = Modality(modality)
    d = config.embed_dim
    return QuerySet(modality, uniform_init(seed, f"queries.{modality.value}", config.queries_for(modality), d, d))


def binarize_attention_mask(mask_probs, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"mask threshold must lie in (0, 1), got {threshold}")
    probs = as_matrix(mask_probs, "mask probabilities")
    return np.where(probs >= threshold, 0.0, NEG_INF)


def mask_decoder_step(x_prev, features, attn_mask, params: Attention) -> np.ndarray:
    x_prev, features = as_matrix(x_prev, "queries"), as_matrix(features, "features")
    if x_prev.shape[1] != features.shape[1]:
        raise DimensionError(f"queries {x_prev.shape} and features {features.shape} differ in width")
    return params(x_prev, features, attn_mask) + x_prev


def mask_logits(q: QuerySet, pixel_features, head: MLP) -> np.ndarray:
    pixel_features = as_matrix(pixel_features, "pixel features")
    if pixel_features.shape[1] != q.dim:
        raise DimensionError(f"pixel features {pixel_features.shape} do not match query width {q.dim}")
    return matmul(head(q.queries), pixel_features.T)


def predict_masks(q: QuerySet, pixel_features, head: MLP) -> np.ndarray:
    """Per-query mask probabilities over the rows of ``pixel_features``."""
    return sigmoid(mask_logits(q, pixel_features, head))


def run_mask_decoder(x0: QuerySet, multiscale_features: Sequence, config: ModelConfig,
                     params: MaskDecoderParams) -> QuerySet:
    """Apply ``config.mask_decoder_layers`` masked cross-attention steps.

    Layer ``l`` attends to scale ``l mod len(features)``; its mask comes from
    the previous layer's mask prediction on that scale. Layer 0 attends
    everywhere.
    """
    n_layers = config.mask_decoder_layers
    if n_layers == 0:
        return x0
    feats = [as_matrix(f, "features") for f in multiscale_features]
    if not feats:
        raise ValueError("mask decoder needs at least one feature scale")
    if len(params.layers) < n_layers:
        raise ValueError(f"mask decoder has {len(params.layers)} layers, config asks for {n_layers}")
    x = x0.queries
    for layer in range(n_layers):
        scale = feats[layer % len(feats)]
        if layer == 0:
            mask = np.zeros((x.shape[0], scale.shape[0]))
        else:
            mask = binarize_attention_mask(predict_masks(x0.replace(x), scale, params.mask_head),
                                           config.mask_threshold)
        x = mask_decoder_step(x, scale, mask, params.layers[layer])
    return x0.replace(x)


def temporal_encode(frame_queries: Sequence[QuerySet], params: Attention) -> list[QuerySet]:
    """Self-attention across frames, independently for every query index."""
    if not frame_queries:
        raise ValueError("temporal encoder needs at least one frame")
    shapes = {f.queries.shape for f in frame_queries}
    if len(shapes) != 1:
        raise DimensionError(f"frames carry differently shaped query sets: {sorted(shapes)}")
    stack = np.stack([f.queries for f in frame_queries])  # (frames, queries, d)
    out = np.empty_like(stack)
    for i in range(stack.shape[1]):
        track = stack[:, i, :]
        out[:, i, :] = params(track, track) + track
    return [f.replace(out[t]) for t, f in enumerate(frame_queries)]


# -- object associator -------------------------------------------------------

def associate_objects(qa: QuerySet, qb: QuerySet, params: AssociatorProjections) -> np.ndarray:
    """Raw association scores in [-1, 1]: the mean of the two projected cosines."""
    if qa.dim != qb.dim:
        raise DimensionError(f"query widths differ: {qa.dim} vs {qb.dim}")
    a_to_b = cosine_matrix(params.forward(qa.queries), qb.queries)
    b_to_a = cosine_matrix(params.backward(qb.queries), qa.queries)
    return (a_to_b + b_to_a.T) / 2


def filter_associations(raw, config: ModelConfig, params: Sequence[ConvLayer]) -> np.ndarray:
    """Stacked single-channel convolutions, ReLU between, logistic output."""
    x = as_matrix(raw, "association matrix")
    if len(params) < config.associator_layers:
        raise ValueError(f"associator filter has {len(params)} layers, config asks for {config.associator_layers}")
    n = config.associator_layers
    for i, layer in enumerate(params[:n]):
        x = conv2d(x, layer.kernel) + layer.bias
        if i < n - 1:
            x = relu(x)
    return sigmoid(x)


def fuse_queries(q: QuerySet, partners: Sequence[tuple[np.ndarray, QuerySet]]) -> QuerySet:
    out = q.queries.copy()
    for refined, partner in partners:
        refined = as_matrix(refined, "association matrix")
        if refined.shape != (len(q), len(partner)):
            raise DimensionError(f"association matrix {refined.shape} does not fit "
                                 f"{len(q)} queries x {len(partner)} partner queries")
        out = out + matmul(refined, partner.queries)
    return q.replace(out)


# -- detection heads ---------------------------------------------------------

def classify_objects(q: QuerySet, label_embeddings) -> np.ndarray:
    """Inner-product logits; by convention the last embedding row is "no object"."""
    label_embeddings = as_matrix(label_embeddings, "label embeddings")
    if label_embeddings.shape[1] != q.dim:
        raise DimensionError(f"label embeddings {label_embeddings.shape} do not match query width {q.dim}")
    return matmul(q.queries, label_embeddings.T)


def detect(q: QuerySet, label_embeddings, pixel_features, head: MLP) -> DetectionOutput:
    return DetectionOutput(classify_objects(q, label_embeddings), mask_logits(q, pixel_features, head))


# -- relation proposal constructor -------------------------------------------

def project_subject_object(q: QuerySet, params: Projector) -> tuple[np.ndarray, np.ndarray]:
    return params.subject(q.queries), params.object(q.queries)


def rpc_refine(e_sub, e_obj, config: ModelConfig, layers: Sequence[RPCLayer]) -> tuple[np.ndarray, np.ndarray]:
    """Two-way cross-attention between subject and object embeddings.

    Both updates in a layer read the previous layer's values; self-attention
    with its own residual follows each cross-attention.
    """
    sub, obj = as_matrix(e_sub, "subject embeddings"), as_matrix(e_obj, "object embeddings")
    if sub.shape != obj.shape:
        raise DimensionError(f"subject {sub.shape} and object {obj.shape} embeddings differ")
    if len(layers) < config.rpc_layers:
        raise ValueError(f"RPC has {len(layers)} layers, config asks for {config.rpc_layers}")
    for layer in layers[:config.rpc_layers]:
        new_sub = sub + layer.cross_sub(sub, obj)
        new_obj = obj + layer.cross_obj(obj, sub)
        sub = new_sub + layer.self_sub(new_sub, new_sub)
        obj = new_obj + layer.self_obj(new_obj, new_obj)
    return sub, obj


def pair_confidence(x_sub, x_obj) -> np.ndarray:
    return cosine_matrix(x_sub, x_obj)


def select_top_k_pairs(c, k: int) -> list[tuple[int, int]]:
    """Highest-scoring ``(subject, object)`` cells; ties go to smaller row, then column."""
    c = as_matrix(c, "pair confidence")
    n_rows, n_cols = c.shape
    if not 0 <= k <= n_rows * n_cols:
        raise ValueError(f"k={k} outside [0, {n_rows * n_cols}] available pairs")
    rows, cols = np.indices(c.shape)
    order = np.lexsort((cols.ravel(), rows.ravel(), -c.ravel()))[:k]
    return [(int(i), int(j)) for i, j in zip(rows.ravel()[order], cols.ravel()[order])]


def build_relation_queries(pairs, x_sub, x_obj, e_sub, e_obj) -> RelationQuerySet:
    x_sub, x_obj = as_matrix(x_sub), as_matrix(x_obj)
    e_sub, e_obj = as_matrix(e_sub), as_matrix(e_obj)
    n_sub, n_obj = x_sub.shape[0], x_obj.shape[0]
    for i, j in pairs:
        if not (0 <= i < n_sub and 0 <= j < n_obj):
            raise IndexError(f"pair ({i}, {j}) out of range for {n_sub} subjects x {n_obj} objects")
    subs = [x_sub[i] + e_sub[i] for i, _ in pairs]
    objs = [x_obj[j] + e_obj[j] for _, j in pairs]
    if not pairs:
        return RelationQuerySet(np.zeros((0, x_sub.shape[1])))
    return RelationQuerySet(np.vstack(subs + objs))


# -- relation decoder --------------------------------------------------------

def relation_decode(q_rel: RelationQuerySet, context, config: ModelConfig,
                    layers: Sequence[RelationLayer]) -> np.ndarray:
    """Cross-attention to the fused context, then self-attention, then FFN; each residual."""
    x = q_rel.tokens
    n_layers = config.relation_decoder_layers
    if n_layers == 0:
        return x
    context = as_matrix(context, "context")
    if context.shape[0] == 0:
        raise ValueError("relation decoder needs a nonempty context")
    if context.shape[1] != x.shape[1]:
        raise DimensionError(f"context {context.shape} does not match token width {x.shape[1]}")
    if len(layers) < n_layers:
        raise ValueError(f"relation decoder has {len(layers)} layers, config asks for {n_layers}")
    for layer in layers[:n_layers]:
        x = x + layer.cross(x, context)
        x = x + layer.self_attn(x, x)
        x = x + layer.ffn(x)
    return x


def classify_relations(x_rel, predicate_embeddings) -> np.ndarray:
    """Predicate logits per pair from the mean of its subject and object tokens."""
    x_rel = as_matrix(x_rel, "relation tokens")
    if x_rel.shape[0] % 2:
        raise DimensionError(f"relation tokens must come in pairs, got {x_rel.shape[0]} rows")
    predicate_embeddings = as_matrix(predicate_embeddings, "predicate embeddings")
    if predicate_embeddings.shape[1] != x_rel.shape[1]:
        raise DimensionError(f"predicate embeddings {predicate_embeddings.shape} do not match width {x_rel.shape[1]}")
    k = x_rel.shape[0] // 2
    pooled = (x_rel[:k] + x_rel[k:]) / 2
    return matmul(pooled, predicate_embeddings.T)


# -- inference ---------------------------------------------------------------

def infer_associations(refined, threshold: float = 0.5) -> list[tuple[int, int, float]]:
    """Hungarian assignment maximising total score; pairs scoring below ``threshold`` are dropped."""
    refined = as_matrix(refined, "association matrix")
    return [(i, j, float(refined[i, j])) for i, j in linear_assignment(refined, maximize=True)
            if refined[i, j] >= threshold]


def open_vocab_label(q: QuerySet, class_embeddings, class_names: Sequence[str]) -> list[str]:
    class_embeddings = as_matrix(class_embeddings, "class embeddings")
    if class_embeddings.shape[0] == 0:
        raise ValueError("open-vocabulary labelling needs at least one class")
    if len(class_names) != class_embeddings.shape[0]:
        raise ValueError(f"{len(class_names)} class names for {class_embeddings.shape[0]} embeddings")
    sims = cosine_matrix(q.queries, class_embeddings)
    return [class_names[int(i)] for i in np.argmax(sims, axis=1)] if len(q) else []
