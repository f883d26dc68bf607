"""Universal scene graphs: data model, merging, parser mechanisms, losses and metrics."""

from .graph import (
    AssociationLink,
    GraphValidationError,
    MaskRegion,
    Modality,
    ObjectNode,
    RelationEdge,
    SceneGraph,
    UniversalSceneGraph,
    align_video_usg,
    build_scene_graph,
    merge_components,
    merge_usg,
)
from .dot import export_dot
from .matching import MatchAssignment, hungarian_match

__version__ = "0.1.0"

__all__ = [
    "align_video_usg",
    "AssociationLink",
    "build_scene_graph",
    "export_dot",
    "GraphValidationError",
    "hungarian_match",
    "MaskRegion",
    "MatchAssignment",
    "merge_components",
    "merge_usg",
    "Modality",
    "ObjectNode",
    "RelationEdge",
    "SceneGraph",
    "UniversalSceneGraph",
]
