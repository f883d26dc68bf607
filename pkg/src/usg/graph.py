"""Scene graph data model and the rules for unifying per-modality graphs.

Per-modality graphs are validated into immutable ``SceneGraph`` values.
``merge_usg`` collapses nodes joined by cross-modal association links into a
single node (text labels win, every mask is kept) and rewrites intra-modality
relations onto the merged ids. ``align_video_usg`` places a static USG in front
of a video scene graph as frame 0.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np


class Modality(str, Enum):
    TEXT = "text"
    IMAGE = "image"
    VIDEO = "video"
    POINT3D = "point3d"

    @property
    def priority(self) -> int:
        """Lower wins when picking labels and predicates for merged nodes."""
        return _PRIORITY[self]

    def __str__(self) -> str:
        return self.value


_PRIORITY = {Modality.TEXT: 0, Modality.IMAGE: 1, Modality.VIDEO: 2, Modality.POINT3D: 3}

NodeRef = tuple[Modality, str]
MaskKey = tuple[Modality, int]


class GraphValidationError(ValueError):
    """Carries every violation found, not just the first."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class MaskRegion:
    """A grid, point-set or character-span mask.

    Exactly one of ``grid``, ``points`` or ``span`` is populated, matching
    ``kind``.
    """

    kind: str
    grid: tuple[tuple[bool, ...], ...] | None = None
    points: tuple[bool, ...] | None = None
    span: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind == "grid2d":
            if not self.grid or not self.grid[0]:
                raise ValueError("grid2d mask needs nonempty dimensions")
            if len({len(r) for r in self.grid}) != 1:
                raise ValueError("grid2d mask rows have unequal lengths")
        elif self.kind == "pointset":
            if self.points is None:
                raise ValueError("pointset mask needs a point list")
        elif self.kind == "textspan":
            if self.span is None or not 0 <= self.span[0] <= self.span[1]:
                raise ValueError(f"textspan needs 0 <= start <= end, got {self.span}")
        else:
            raise ValueError(f"unknown mask kind {self.kind!r}")

    @classmethod
    def grid2d(cls, values) -> MaskRegion:
        arr = np.asarray(values, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"grid2d mask must be 2-D, got shape {arr.shape}")
        return cls("grid2d", grid=tuple(tuple(bool(v) for v in row) for row in arr))

    @classmethod
    def pointset(cls, values) -> MaskRegion:
        return cls("pointset", points=tuple(bool(v) for v in np.asarray(values, dtype=bool).ravel()))

    @classmethod
    def textspan(cls, start: int, end: int) -> MaskRegion:
        return cls("textspan", span=(int(start), int(end)))

    def as_array(self) -> np.ndarray:
        if self.kind == "grid2d":
            return np.array(self.grid, dtype=bool)
        if self.kind == "pointset":
            return np.array(self.points, dtype=bool)
        raise TypeError("textspan masks have no array form")

    def union(self, other: MaskRegion) -> MaskRegion:
        """Elementwise OR (hull for spans); used when two same-modality sources merge."""
        if self.kind != other.kind:
            raise ValueError(f"cannot combine {self.kind} and {other.kind} masks")
        if self.kind == "textspan":
            return MaskRegion.textspan(min(self.span[0], other.span[0]), max(self.span[1], other.span[1]))
        a, b = self.as_array(), other.as_array()
        if a.shape != b.shape:
            raise ValueError(f"cannot combine masks of shape {a.shape} and {b.shape}")
        return MaskRegion.grid2d(a | b) if self.kind == "grid2d" else MaskRegion.pointset(a | b)


@dataclass(frozen=True)
class ObjectNode:
    id: str
    label: str
    masks: Mapping[MaskKey, MaskRegion]
    source_modalities: frozenset[Modality]


@dataclass(frozen=True)
class RelationEdge:
    subject: str
    predicate: str
    object: str
    frame: int | None = None
    # source modality; only populated once an edge lives inside a USG
    modality: Modality | None = None

    def sort_key(self):
        return (self.subject, self.object, -1 if self.frame is None else self.frame,
                self.predicate, -1 if self.modality is None else self.modality.priority)


@dataclass(frozen=True)
class SceneGraph:
    modality: Modality
    objects: tuple[ObjectNode, ...]
    relations: tuple[RelationEdge, ...]
    frame_count: int = 1

    @property
    def ids(self) -> list[str]:
        return [o.id for o in self.objects]

    def node(self, node_id: str) -> ObjectNode:
        for o in self.objects:
            if o.id == node_id:
                return o
        raise KeyError(node_id)


@dataclass(frozen=True)
class AssociationLink:
    a: NodeRef
    b: NodeRef
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "a", (Modality(self.a[0]), str(self.a[1])))
        object.__setattr__(self, "b", (Modality(self.b[0]), str(self.b[1])))
        if self.a[0] == self.b[0]:
            raise ValueError(f"association link must join two modalities, got {self.a} and {self.b}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"association score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class UniversalSceneGraph:
    objects: tuple[ObjectNode, ...]
    relations: tuple[RelationEdge, ...]
    provenance: Mapping[str, frozenset[NodeRef]]
    frame_count: int = 1
    # (subject, object, frame) pairs where non-text modalities disagree on the predicate
    conflicts: tuple[tuple[str, str, int | None], ...] = field(default=())

    @property
    def ids(self) -> list[str]:
        return [o.id for o in self.objects]

    def node(self, node_id: str) -> ObjectNode:
        for o in self.objects:
            if o.id == node_id:
                return o
        raise KeyError(node_id)


def make_node(node_id: str, label: str, mask: MaskRegion | Mapping[MaskKey, MaskRegion],
              modality: Modality | str, frame: int = 0) -> ObjectNode:
    """Convenience constructor for a single-modality node."""
    modality = Modality(modality)
    masks = dict(mask) if isinstance(mask, Mapping) else {(modality, frame): mask}
    return ObjectNode(node_id, label, masks, frozenset({modality}))


def build_scene_graph(modality, objects: Iterable[ObjectNode], relations: Iterable[RelationEdge],
                      frame_count: int = 1, allow_self_relations: bool = False) -> SceneGraph:
    modality = Modality(modality)
    objects = tuple(objects)
    relations = tuple(relations)
    problems: list[str] = []

    if frame_count < 0:
        problems.append(f"frame_count must be >= 0, got {frame_count}")
    if modality is not Modality.VIDEO and frame_count != 1:
        problems.append(f"{modality} graphs have exactly one frame, got frame_count={frame_count}")

    seen: set[str] = set()
    point_counts: set[int] = set()
    for obj in objects:
        if not obj.id:
            problems.append("object with empty id")
        if obj.id in seen:
            problems.append(f"duplicate object id {obj.id!r}")
        seen.add(obj.id)
        if not obj.masks:
            problems.append(f"object {obj.id!r} has no mask")
        if not obj.source_modalities:
            problems.append(f"object {obj.id!r} has no source modality")
        for (mod, frame), mask in obj.masks.items():
            if mod is not modality:
                problems.append(f"object {obj.id!r} carries a {mod} mask inside a {modality} graph")
            if not 0 <= frame < max(frame_count, 1):
                problems.append(f"object {obj.id!r} mask frame {frame} out of range [0, {frame_count})")
            if mask.kind == "pointset":
                point_counts.add(len(mask.points))
    if len(point_counts) > 1:
        problems.append(f"pointset masks disagree on scene point count: {sorted(point_counts)}")

    for rel in relations:
        for end in (rel.subject, rel.object):
            if end not in seen:
                problems.append(f"relation {rel.subject!r} -{rel.predicate}-> {rel.object!r} "
                                f"references missing id {end!r}")
        if rel.subject == rel.object and not allow_self_relations:
            problems.append(f"self relation on {rel.subject!r} ({rel.predicate!r}) not allowed")
        if not rel.predicate:
            problems.append(f"relation {rel.subject!r} -> {rel.object!r} has an empty predicate")
        if modality is Modality.VIDEO and rel.frame is None:
            problems.append(f"video relation {rel.subject!r} -{rel.predicate}-> {rel.object!r} has no frame")
        if rel.frame is not None and not 0 <= rel.frame < frame_count:
            problems.append(f"relation frame {rel.frame} out of range [0, {frame_count})")

    if problems:
        raise GraphValidationError(problems)
    return SceneGraph(modality, objects, relations, frame_count)


class UnionFind:
    """Disjoint-set forest with path halving and union by size."""

    def __init__(self, items: Iterable = ()):
        self._parent: dict = {}
        self._size: dict = {}
        for item in items:
            self.add(item)

    def add(self, item):
        if item not in self._parent:
            self._parent[item] = item
            self._size[item] = 1

    def find(self, item):
        self.add(item)
        parent = self._parent
        while parent[item] != item:
            parent[item] = parent[parent[item]]
            item = parent[item]
        return item

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self._size[ra] < self._size[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        self._size[ra] += self._size[rb]
        return ra

    def groups(self) -> list[frozenset]:
        out = defaultdict(set)
        for item in self._parent:
            out[self.find(item)].add(item)
        return [frozenset(g) for g in out.values()]


def _ref_key(ref):
    return (ref[0].priority, ref[1]) if isinstance(ref[0], Modality) else ref


def merge_components(links: Iterable[AssociationLink], nodes: Iterable = ()) -> list[frozenset]:
    """Connected components of the link graph; unlinked ``nodes`` stay singletons.

    Components come back in a deterministic order (by their smallest member).
    """
    uf = UnionFind(nodes)
    for link in links:
        uf.union(link.a, link.b)
    groups = uf.groups()
    return sorted(groups, key=lambda g: min(_ref_key(r) for r in g))


@dataclass
class _Unit:
    id: str
    label: str
    rank: tuple[int, str]
    masks: dict
    modalities: frozenset
    provenance: frozenset


def _merge_units(units: list[_Unit], joins: Iterable[tuple[str, str]]):
    uf = UnionFind(u.id for u in units)
    for a, b in joins:
        uf.union(a, b)
    by_id = {u.id: u for u in units}
    nodes, provenance, id_map = [], {}, {}
    for group in uf.groups():
        members = sorted((by_id[i] for i in group), key=lambda u: u.rank)
        best = members[0]
        masks: dict = {}
        for u in members:
            for key, mask in u.masks.items():
                masks[key] = masks[key].union(mask) if key in masks else mask
        nodes.append(ObjectNode(best.id, best.label, dict(sorted(masks.items(), key=_mask_key_order)),
                                frozenset().union(*(u.modalities for u in members))))
        provenance[best.id] = frozenset().union(*(u.provenance for u in members))
        for u in members:
            id_map[u.id] = best.id
    nodes.sort(key=lambda n: n.id)
    return nodes, dict(sorted(provenance.items())), id_map


def _mask_key_order(item):
    (mod, frame), _ = item
    return (mod.priority, frame)


def _collapse_relations(edges: Iterable[RelationEdge]):
    """Apply the predicate-priority rule to edges landing on the same node pair.

    A text-sourced predicate replaces every other modality's predicate for the
    same (subject, object, frame). Without a text edge all predicates are kept;
    differing ones are reported as conflicts.
    """
    groups = defaultdict(list)
    for e in edges:
        groups[(e.subject, e.object, e.frame)].append(e)
    kept, conflicts = [], []
    for key, group in groups.items():
        text = [e for e in group if e.modality is Modality.TEXT]
        if text:
            kept.extend(text)
            continue
        first_source: dict[str, Modality | None] = {}
        for e in sorted(group, key=lambda e: -1 if e.modality is None else e.modality.priority):
            src = first_source.setdefault(e.predicate, e.modality)
            if src != e.modality:
                continue  # same predicate already contributed by another modality
            kept.append(e)
        if len(first_source) > 1 and len({m for m in first_source.values()}) > 1:
            conflicts.append(key)
    kept.sort(key=RelationEdge.sort_key)
    conflicts.sort(key=lambda k: (k[0], k[1], -1 if k[2] is None else k[2]))
    return tuple(kept), tuple(conflicts)


def namespaced(modality: Modality, node_id: str) -> str:
    return f"{Modality(modality).value}:{node_id}"


def merge_usg(graphs: Sequence[SceneGraph], links: Iterable[AssociationLink]) -> UniversalSceneGraph:
    links = list(links)
    problems = []
    by_mod: dict[Modality, SceneGraph] = {}
    for g in graphs:
        if g.modality in by_mod:
            problems.append(f"two graphs share modality {g.modality}")
        by_mod[g.modality] = g
    id_sets = {m: set(g.ids) for m, g in by_mod.items()}
    for link in links:
        for mod, nid in (link.a, link.b):
            if nid not in id_sets.get(mod, ()):
                problems.append(f"association link endpoint {mod}:{nid} does not resolve")
    if problems:
        raise GraphValidationError(problems)

    units = []
    for g in graphs:
        for o in g.objects:
            units.append(_Unit(namespaced(g.modality, o.id), o.label, (g.modality.priority, o.id),
                               dict(o.masks), o.source_modalities, frozenset({(g.modality, o.id)})))
    joins = [(namespaced(*link.a), namespaced(*link.b)) for link in links]
    nodes, provenance, id_map = _merge_units(units, joins)

    edges = []
    for g in graphs:
        for r in g.relations:
            edges.append(RelationEdge(id_map[namespaced(g.modality, r.subject)], r.predicate,
                                      id_map[namespaced(g.modality, r.object)], r.frame, g.modality))
    relations, conflicts = _collapse_relations(edges)
    frame_count = max([1] + [g.frame_count for g in graphs])
    return UniversalSceneGraph(tuple(nodes), relations, provenance, frame_count, conflicts)


def align_video_usg(static: UniversalSceneGraph, video: SceneGraph,
                    links: Iterable[AssociationLink]) -> UniversalSceneGraph:
    """Prepend ``static`` as frame 0 of ``video`` and merge associated objects.

    Video objects are tracked across frames, so linking a static object to a
    video object associates it with that object in every frame.
    """
    if not isinstance(video, SceneGraph) or video.modality is not Modality.VIDEO:
        raise GraphValidationError([f"second argument must be a video scene graph, got "
                                    f"{getattr(video, 'modality', type(video).__name__)}"])
    if static.frame_count != 1:
        raise GraphValidationError([f"static USG must have exactly one frame, got {static.frame_count}"])
    links = list(links)
    if video.frame_count == 0 and not video.objects:
        return static

    resolve = {}
    for merged_id, sources in static.provenance.items():
        for ref in sources:
            resolve[ref] = merged_id
    for o in video.objects:
        resolve[(Modality.VIDEO, o.id)] = namespaced(Modality.VIDEO, o.id)
    problems = [f"association link endpoint {ref[0]}:{ref[1]} does not resolve"
                for link in links for ref in (link.a, link.b) if ref not in resolve]
    if problems:
        raise GraphValidationError(problems)

    units = []
    for o in static.objects:
        sources = static.provenance[o.id]
        units.append(_Unit(o.id, o.label, min((m.priority, i) for m, i in sources),
                           dict(o.masks), o.source_modalities, sources))
    for o in video.objects:
        shifted = {(mod, f + 1): m for (mod, f), m in o.masks.items()}
        units.append(_Unit(namespaced(Modality.VIDEO, o.id), o.label, (Modality.VIDEO.priority, o.id),
                           shifted, o.source_modalities, frozenset({(Modality.VIDEO, o.id)})))
    nodes, provenance, id_map = _merge_units(units, [(resolve[l.a], resolve[l.b]) for l in links])

    edges = [RelationEdge(id_map[r.subject], r.predicate, id_map[r.object], 0, r.modality)
             for r in static.relations]
    for r in video.relations:
        edges.append(RelationEdge(id_map[namespaced(Modality.VIDEO, r.subject)], r.predicate,
                                  id_map[namespaced(Modality.VIDEO, r.object)], r.frame + 1, Modality.VIDEO))
    relations, conflicts = _collapse_relations(edges)
    return UniversalSceneGraph(tuple(nodes), relations, provenance, video.frame_count + 1, conflicts)


def validate_usg(usg: UniversalSceneGraph) -> list[str]:
    """Structural checks for a USG read from disk; returns violations."""
    problems = []
    ids = usg.ids
    if len(set(ids)) != len(ids):
        problems.append("duplicate merged node ids")
    idset = set(ids)
    for r in usg.relations:
        for end in (r.subject, r.object):
            if end not in idset:
                problems.append(f"relation references missing id {end!r}")
        if r.frame is not None and not 0 <= r.frame < usg.frame_count:
            problems.append(f"relation frame {r.frame} out of range [0, {usg.frame_count})")
    if set(usg.provenance) != idset:
        problems.append("provenance keys do not match node ids")
    seen: set = set()
    for merged_id, sources in usg.provenance.items():
        if not sources:
            problems.append(f"merged node {merged_id!r} has empty provenance")
        dup = seen & set(sources)
        if dup:
            problems.append(f"source nodes {sorted(map(str, dup))} appear in more than one merged node")
        seen |= set(sources)
    for o in usg.objects:
        if not o.masks:
            problems.append(f"object {o.id!r} has no mask")
        for (_, frame) in o.masks:
            if not 0 <= frame < max(usg.frame_count, 1):
                problems.append(f"object {o.id!r} mask frame {frame} out of range")
    return problems
