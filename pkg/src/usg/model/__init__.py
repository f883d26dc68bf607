from .config import ModelConfig
from .layers import MLP, Attention, Linear
from .ops import (
    AssociationMatrix,
    DetectionOutput,
    QuerySet,
    RelationQuerySet,
    associate_objects,
    binarize_attention_mask,
    build_relation_queries,
    classify_objects,
    classify_relations,
    detect,
    filter_associations,
    fuse_queries,
    infer_associations,
    init_queries,
    mask_decoder_step,
    mask_logits,
    open_vocab_label,
    pair_confidence,
    predict_masks,
    project_subject_object,
    relation_decode,
    rpc_refine,
    run_mask_decoder,
    select_top_k_pairs,
    temporal_encode,
)
from .params import init_params, param_shapes
from .pipeline import ModalityInput, ParseResult, Vocabulary, parse

__all__ = [
    "associate_objects",
    "AssociationMatrix",
    "Attention",
    "binarize_attention_mask",
    "build_relation_queries",
    "classify_objects",
    "classify_relations",
    "detect",
    "DetectionOutput",
    "filter_associations",
    "fuse_queries",
    "infer_associations",
    "init_params",
    "init_queries",
    "Linear",
    "mask_decoder_step",
    "mask_logits",
    "MLP",
    "ModalityInput",
    "ModelConfig",
    "open_vocab_label",
    "pair_confidence",
    "param_shapes",
    "parse",
    "ParseResult",
    "predict_masks",
    "project_subject_object",
    "QuerySet",
    "relation_decode",
    "RelationQuerySet",
    "rpc_refine",
    "run_mask_decoder",
    "select_top_k_pairs",
    "temporal_encode",
    "Vocabulary",
]
