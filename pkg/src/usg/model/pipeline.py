"""End-to-end forward chain: decoder -> associator -> heads -> RPC -> relation decoder -> USG."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from ..graph import (
    AssociationLink,
    MaskRegion,
    Modality,
    SceneGraph,
    UniversalSceneGraph,
    align_video_usg,
    build_scene_graph,
    make_node,
    merge_usg,
    RelationEdge,
)
from ..tensor import DimensionError, as_matrix, uniform_init
from . import params as P
from .config import ModelConfig
from .ops import (
    AssociationMatrix,
    QuerySet,
    associate_objects,
    build_relation_queries,
    classify_objects,
    classify_relations,
    filter_associations,
    fuse_queries,
    infer_associations,
    open_vocab_label,
    pair_confidence,
    predict_masks,
    project_subject_object,
    rpc_refine,
    relation_decode,
    run_mask_decoder,
    select_top_k_pairs,
    temporal_encode,
)

log = logging.getLogger(__name__)

DEFAULT_OBJECT_CLASSES = ("person", "sofa", "phone", "table", "chair", "cup", "dog", "lamp")
DEFAULT_PREDICATES = ("on", "near", "holding", "sitting on", "looking at", "next to")


@dataclass(frozen=True)
class Vocabulary:
    object_names: tuple[str, ...]
    object_embeddings: np.ndarray
    no_object: np.ndarray  # 1 x d
    predicate_names: tuple[str, ...]
    predicate_embeddings: np.ndarray

    @property
    def label_embeddings(self) -> np.ndarray:
        """Class rows followed by the "no object" row."""
        return np.vstack([self.object_embeddings, self.no_object])

    @classmethod
    def toy(cls, embed_dim: int, seed: int) -> Vocabulary:
        d = embed_dim
        return cls(DEFAULT_OBJECT_CLASSES,
                   uniform_init(seed, "vocab.objects", len(DEFAULT_OBJECT_CLASSES), d, 1),
                   uniform_init(seed, "vocab.no_object", 1, d, 1),
                   DEFAULT_PREDICATES,
                   uniform_init(seed, "vocab.predicates", len(DEFAULT_PREDICATES), d, 1))

    @classmethod
    def from_dict(cls, data: Mapping, embed_dim: int) -> Vocabulary:
        objects = data["objects"]
        predicates = data["predicates"]
        if not objects or not predicates:
            raise ValueError("vocabulary needs at least one object class and one predicate")
        obj = as_matrix([objects[k] for k in objects], "object embeddings")
        pred = as_matrix([predicates[k] for k in predicates], "predicate embeddings")
        no_obj = as_matrix(data.get("no_object", np.zeros(embed_dim)), "no-object embedding")
        for name, m in (("object", obj), ("predicate", pred), ("no-object", no_obj)):
            if m.shape[1] != embed_dim:
                raise DimensionError(f"{name} embeddings have width {m.shape[1]}, model uses {embed_dim}")
        return cls(tuple(objects), obj, no_obj, tuple(predicates), pred)


@dataclass(frozen=True)
class ModalityInput:
    """Encoder outputs for one modality.

    ``scales`` are the multi-scale features fed to the mask decoder; for video
    each entry is one frame instead. ``pixel_features`` (mask prediction) and
    ``context`` (relation decoder) default to the last scale.
    """

    modality: Modality
    scales: tuple[np.ndarray, ...]
    pixel_features: np.ndarray | None = None
    context: np.ndarray | None = None
    grid_shape: tuple[int, int] | None = None

    def pixels(self, frame: int | None = None) -> np.ndarray:
        if self.modality is Modality.VIDEO:
            return self.scales[frame if frame is not None else -1]
        return self.pixel_features if self.pixel_features is not None else self.scales[-1]

    def context_features(self) -> np.ndarray:
        if self.context is not None:
            return self.context
        if self.modality is Modality.VIDEO:
            return np.vstack(self.scales)
        return self.scales[-1]


@dataclass
class ParseResult:
    queries: dict[Modality, QuerySet]
    frame_queries: list[QuerySet]
    associations: dict[tuple[Modality, Modality], AssociationMatrix]
    links: dict[tuple[Modality, Modality], list[tuple[int, int, float]]]
    graphs: dict[Modality, SceneGraph]
    usg: UniversalSceneGraph
    kept: dict[Modality, list[int]] = field(default_factory=dict)


def _mask_region(modality: Modality, probs: np.ndarray, threshold: float, grid_shape) -> MaskRegion:
    on = probs >= threshold
    if modality is Modality.POINT3D:
        return MaskRegion.pointset(on)
    if modality is Modality.TEXT:
        idx = np.flatnonzero(on)
        return MaskRegion.textspan(int(idx[0]), int(idx[-1]) + 1) if idx.size else MaskRegion.textspan(0, 0)
    shape = grid_shape or (1, on.size)
    if shape[0] * shape[1] != on.size:
        raise DimensionError(f"grid shape {shape} does not cover {on.size} pixels")
    return MaskRegion.grid2d(on.reshape(shape))


def _relations(q: QuerySet, kept: set[int], params, config: ModelConfig, context: np.ndarray,
               vocab: Vocabulary, frame: int | None = None) -> list[RelationEdge]:
    n = len(q)
    if n == 0 or config.top_k_pairs == 0:
        return []
    e_sub, e_obj = project_subject_object(q, P.projector(params, q.modality))
    x_sub, x_obj = rpc_refine(e_sub, e_obj, config, P.rpc_layers(params, config, q.modality))
    conf = pair_confidence(x_sub, x_obj)
    pairs = [(i, j) for i, j in select_top_k_pairs(conf, min(config.top_k_pairs, n * n))
             if i != j and i in kept and j in kept]
    if not pairs:
        return []
    q_rel = build_relation_queries(pairs, x_sub, x_obj, e_sub, e_obj)
    x_rel = relation_decode(q_rel, context, config, P.relation_layers(params, config))
    logits = classify_relations(x_rel, vocab.predicate_embeddings)
    return [RelationEdge(f"q{i}", vocab.predicate_names[int(np.argmax(logits[p]))], f"q{j}", frame)
            for p, (i, j) in enumerate(pairs)]


def parse(inputs: Sequence[ModalityInput], params: Mapping[str, np.ndarray], config: ModelConfig,
          vocab: Vocabulary) -> ParseResult:
    """Run the full forward chain and assemble a universal scene graph."""
    if not inputs:
        raise ValueError("at least one modality input is required")
    by_mod = {}
    for inp in inputs:
        if inp.modality in by_mod:
            raise ValueError(f"modality {inp.modality} given twice")
        by_mod[inp.modality] = inp
    mods = sorted(by_mod, key=lambda m: m.priority)
    problems = P.check_params(params, config, mods)
    if problems:
        raise ValueError("; ".join(problems))
    d = config.embed_dim
    for inp in inputs:
        for f in inp.scales:
            if as_matrix(f).shape[1] != d:
                raise DimensionError(f"{inp.modality} features have width {as_matrix(f).shape[1]}, model uses {d}")

    # shared mask decoder (per frame + temporal encoder for video)
    queries: dict[Modality, QuerySet] = {}
    frame_queries: list[QuerySet] = []
    for m in mods:
        x0 = QuerySet(m, params[f"queries.{m.value}"])
        dec = P.mask_decoder_params(params, config, m)
        if m is Modality.VIDEO:
            frames = [run_mask_decoder(x0, [f], config, dec) for f in by_mod[m].scales]
            frame_queries = temporal_encode(frames, P.attention(params, "temporal")) if frames else []
            pooled = np.mean([f.queries for f in frame_queries], axis=0) if frame_queries else x0.queries
            queries[m] = x0.replace(pooled)
        else:
            queries[m] = run_mask_decoder(x0, by_mod[m].scales, config, dec)
        log.debug("decoded %d %s queries", len(queries[m]), m.value)

    # object associator for every modality pair
    filt = P.associator_filter(params, config)
    associations, index_links = {}, {}
    for a, b in combinations(mods, 2):
        raw = associate_objects(queries[a], queries[b], P.associator_projections(params, a, b))
        refined = filter_associations(raw, config, filt)
        associations[(a, b)] = AssociationMatrix(raw, refined)
        index_links[(a, b)] = infer_associations(refined, config.association_threshold)
        log.debug("%s-%s: %d associations", a.value, b.value, len(index_links[(a, b)]))

    # query fusion reads the unfused partner queries
    fused = {}
    for m in mods:
        partners = []
        for (a, b), am in associations.items():
            if a is m:
                partners.append((am.refined, queries[b]))
            elif b is m:
                partners.append((am.refined.T, queries[a]))
        fused[m] = fuse_queries(queries[m], partners)

    context = np.vstack([by_mod[m].context_features() for m in mods])
    no_object = vocab.label_embeddings.shape[0] - 1
    graphs, kept = {}, {}
    for m in mods:
        q = fused[m]
        logits = classify_objects(q, vocab.label_embeddings)
        keep = [i for i in range(len(q)) if int(np.argmax(logits[i])) != no_object]
        kept[m] = keep
        labels = open_vocab_label(q, vocab.object_embeddings, vocab.object_names)
        inp = by_mod[m]
        nodes, relations = [], []
        if m is Modality.VIDEO:
            n_frames = len(frame_queries)
            frame_probs = []
            for t in range(n_frames):
                fq = frame_queries[t]
                fq = fq.replace(fq.queries + (q.queries - queries[m].queries))
                frame_probs.append(predict_masks(fq, inp.pixels(t), P.mlp(params, f"head.{m.value}.mask")))
                relations += _relations(fq, set(keep), params, config, context, vocab, frame=t)
            for i in keep:
                masks = {(m, t): _mask_region(m, frame_probs[t][i], config.mask_threshold, inp.grid_shape)
                         for t in range(n_frames)}
                if masks:
                    nodes.append(make_node(f"q{i}", labels[i], masks, m))
            relations = [r for r in relations if r.subject in {n.id for n in nodes} and r.object in {n.id for n in nodes}]
            graphs[m] = build_scene_graph(m, nodes, relations, n_frames)
        else:
            probs = predict_masks(q, inp.pixels(), P.mlp(params, f"head.{m.value}.mask"))
            for i in keep:
                nodes.append(make_node(f"q{i}", labels[i], _mask_region(m, probs[i], config.mask_threshold,
                                                                         inp.grid_shape), m))
            relations = _relations(q, set(keep), params, config, context, vocab)
            graphs[m] = build_scene_graph(m, nodes, relations, 1)

    node_ids = {m: set(g.ids) for m, g in graphs.items()}
    links = []
    for (a, b), triples in index_links.items():
        for i, j, score in triples:
            if f"q{i}" in node_ids[a] and f"q{j}" in node_ids[b]:
                links.append(AssociationLink((a, f"q{i}"), (b, f"q{j}"), min(max(score, 0.0), 1.0)))

    static = [graphs[m] for m in mods if m is not Modality.VIDEO]
    if Modality.VIDEO in graphs and static:
        static_links = [l for l in links if Modality.VIDEO not in (l.a[0], l.b[0])]
        video_links = [l for l in links if Modality.VIDEO in (l.a[0], l.b[0])]
        usg = align_video_usg(merge_usg(static, static_links), graphs[Modality.VIDEO], video_links)
    else:
        usg = merge_usg(list(graphs.values()), links)
    return ParseResult(queries, frame_queries, associations, index_links, graphs, usg, kept)
