"""Graphviz DOT rendering of a universal scene graph."""

from __future__ import annotations

from .graph import Modality, UniversalSceneGraph

_SINGLE_SHAPES = {
    Modality.TEXT: "note",
    Modality.IMAGE: "box",
    Modality.VIDEO: "box3d",
    Modality.POINT3D: "cylinder",
}


def node_shape(modalities) -> str:
    mods = frozenset(modalities)
    if len(mods) == 1:
        return _SINGLE_SHAPES[next(iter(mods))]
    return "doubleoctagon" if len(mods) == 2 else "tripleoctagon"


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def export_dot(usg: UniversalSceneGraph) -> str:
    lines = ["digraph usg {"]
    for node in sorted(usg.objects, key=lambda n: n.id):
        mods = sorted(node.source_modalities, key=lambda m: m.priority)
        lines.append(f"  {_quote(node.id)} [label={_quote(node.label)}, shape={node_shape(mods)}, "
                     f"tooltip={_quote(','.join(m.value for m in mods))}];")
    for rel in sorted(usg.relations, key=lambda r: r.sort_key()):
        attrs = f"label={_quote(rel.predicate)}"
        if rel.frame is not None:
            attrs += f", comment={_quote(f'frame {rel.frame}')}"
        lines.append(f"  {_quote(rel.subject)} -> {_quote(rel.object)} [{attrs}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
