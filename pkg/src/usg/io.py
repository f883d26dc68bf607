"""File formats: scene graph / association / USG JSON and the USGF matrix container."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .graph import (
    AssociationLink,
    GraphValidationError,
    MaskRegion,
    Modality,
    ObjectNode,
    RelationEdge,
    SceneGraph,
    UniversalSceneGraph,
    build_scene_graph,
    validate_usg,
)

USGF_MAGIC = b"USGF"
USGF_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class FormatError(ValueError):
    """Malformed file contents (as opposed to an unreadable file)."""


# -- masks ------------------------------------------------------------------

def mask_to_dict(mask: MaskRegion) -> dict:
    if mask.kind == "grid2d":
        return {"kind": "grid2d", "grid": [[int(v) for v in row] for row in mask.grid]}
    if mask.kind == "pointset":
        return {"kind": "pointset", "points": [int(v) for v in mask.points]}
    return {"kind": "textspan", "start": mask.span[0], "end": mask.span[1]}


def mask_from_dict(d: Mapping) -> MaskRegion:
    kind = d.get("kind")
    try:
        if kind == "grid2d":
            return MaskRegion.grid2d(d["grid"])
        if kind == "pointset":
            return MaskRegion.pointset(d["points"])
        if kind == "textspan":
            return MaskRegion.textspan(d["start"], d["end"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad {kind} mask: {exc}") from exc
    raise FormatError(f"unknown mask kind {kind!r}")


# -- per-modality scene graphs -----------------------------------------------

def _relation_from_dict(d: Mapping) -> RelationEdge:
    frame = d.get("frame")
    modality = d.get("modality")
    return RelationEdge(str(d["subject"]), str(d["predicate"]), str(d["object"]),
                        None if frame is None else int(frame),
                        None if modality is None else Modality(modality))


def _relation_to_dict(r: RelationEdge) -> dict:
    out = {"subject": r.subject, "predicate": r.predicate, "object": r.object}
    if r.frame is not None:
        out["frame"] = r.frame
    if r.modality is not None:
        out["modality"] = r.modality.value
    return out


def scene_graph_from_dict(data: Mapping, allow_self_relations: bool = False) -> SceneGraph:
    """Parse a per-modality graph.

    Objects carry either a single ``"mask"`` (frame 0) or, for video, a
    ``"masks"`` list whose entries add a ``"frame"`` field.
    """
    try:
        modality = Modality(data["modality"])
        frame_count = int(data.get("frame_count", 1))
        objects = []
        for o in data.get("objects", []):
            masks = {}
            if "mask" in o:
                masks[(modality, 0)] = mask_from_dict(o["mask"])
            for m in o.get("masks", []):
                masks[(modality, int(m.get("frame", 0)))] = mask_from_dict(m)
            objects.append(ObjectNode(str(o["id"]), str(o["label"]), masks, frozenset({modality})))
        relations = [_relation_from_dict(r) for r in data.get("relations", [])]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed scene graph: {exc!r}") from exc
    return build_scene_graph(modality, objects, relations, frame_count, allow_self_relations)


def scene_graph_to_dict(g: SceneGraph) -> dict:
    objects = []
    for o in g.objects:
        entry = {"id": o.id, "label": o.label}
        if g.modality is Modality.VIDEO:
            entry["masks"] = [dict(mask_to_dict(m), frame=f) for (_, f), m in sorted(o.masks.items(), key=lambda kv: kv[0][1])]
        else:
            entry["mask"] = mask_to_dict(next(iter(o.masks.values())))
        objects.append(entry)
    return {"modality": g.modality.value, "frame_count": g.frame_count, "objects": objects,
            "relations": [_relation_to_dict(r) for r in g.relations]}


# -- association links -------------------------------------------------------

def links_from_dict(data: Mapping) -> list[AssociationLink]:
    try:
        return [AssociationLink(tuple(l["a"]), tuple(l["b"]), float(l.get("score", 1.0)))
                for l in data.get("links", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed association file: {exc!r}") from exc


def links_to_dict(links) -> dict:
    return {"links": [{"a": [l.a[0].value, l.a[1]], "b": [l.b[0].value, l.b[1]], "score": l.score}
                      for l in links]}


# -- universal scene graphs --------------------------------------------------

def usg_to_dict(usg: UniversalSceneGraph) -> dict:
    objects = []
    for o in sorted(usg.objects, key=lambda n: n.id):
        masks = [dict(mask_to_dict(m), modality=mod.value, frame=f)
                 for (mod, f), m in sorted(o.masks.items(), key=lambda kv: (kv[0][0].priority, kv[0][1]))]
        objects.append({"id": o.id, "label": o.label,
                        "modalities": sorted((m.value for m in o.source_modalities),
                                             key=lambda v: Modality(v).priority),
                        "masks": masks})
    provenance = {k: sorted([[m.value, i] for m, i in v], key=lambda p: (Modality(p[0]).priority, p[1]))
                  for k, v in sorted(usg.provenance.items())}
    out = {"frame_count": usg.frame_count, "objects": objects,
           "relations": [_relation_to_dict(r) for r in sorted(usg.relations, key=RelationEdge.sort_key)],
           "provenance": provenance}
    if usg.conflicts:
        out["conflicts"] = [{"subject": s, "object": o, "frame": f} for s, o, f in usg.conflicts]
    return out


def usg_from_dict(data: Mapping) -> UniversalSceneGraph:
    try:
        objects = []
        for o in data.get("objects", []):
            masks = {(Modality(m["modality"]), int(m.get("frame", 0))): mask_from_dict(m)
                     for m in o.get("masks", [])}
            objects.append(ObjectNode(str(o["id"]), str(o["label"]), masks,
                                      frozenset(Modality(v) for v in o.get("modalities", []))))
        relations = tuple(_relation_from_dict(r) for r in data.get("relations", []))
        provenance = {k: frozenset((Modality(m), str(i)) for m, i in v)
                      for k, v in data.get("provenance", {}).items()}
        conflicts = tuple((c["subject"], c["object"], c.get("frame")) for c in data.get("conflicts", []))
        usg = UniversalSceneGraph(tuple(objects), relations, provenance, int(data.get("frame_count", 1)),
                                  conflicts)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed USG: {exc!r}") from exc
    problems = validate_usg(usg)
    if problems:
        raise GraphValidationError(problems)
    return usg


def dumps(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def write_json(path, data) -> None:
    Path(path).write_text(dumps(data), encoding="utf-8")


# -- USGF binary matrices ----------------------------------------------------

def encode_matrix(m) -> bytes:
    m = np.asarray(m, dtype="<f8")
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    return _HEADER.pack(USGF_MAGIC, USGF_VERSION, m.shape[0], m.shape[1]) + np.ascontiguousarray(m).tobytes()


def decode_matrix(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise FormatError("feature file shorter than its header")
    magic, version, rows, cols = _HEADER.unpack_from(blob)
    if magic != USGF_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {USGF_MAGIC!r}")
    if version != USGF_VERSION:
        raise FormatError(f"unsupported USGF version {version}")
    payload = blob[_HEADER.size:]
    if len(payload) != rows * cols * 8:
        raise FormatError(f"payload holds {len(payload)} bytes, header promises {rows}x{cols} float64")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)


def write_matrix(path, m) -> None:
    Path(path).write_bytes(encode_matrix(m))


def read_matrix(path) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes())


def save_params(directory, params: Mapping[str, np.ndarray]) -> Path:
    """Write each matrix as a USGF file plus a ``params.json`` manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"format": "usg-params", "version": 1, "matrices": {}}
    for i, name in enumerate(sorted(params)):
        fname = f"{i:04d}.usgf"
        write_matrix(directory / fname, params[name])
        manifest["matrices"][name] = {"file": fname, "shape": list(np.shape(params[name]))}
    path = directory / "params.json"
    write_json(path, manifest)
    return path


def load_params(manifest_path) -> dict[str, np.ndarray]:
    manifest_path = Path(manifest_path)
    manifest = read_json(manifest_path)
    if manifest.get("format") != "usg-params":
        raise FormatError(f"{manifest_path} is not a usg-params manifest")
    out = {}
    for name, entry in manifest.get("matrices", {}).items():
        m = read_matrix(manifest_path.parent / entry["file"])
        if list(m.shape) != list(entry.get("shape", m.shape)):
            raise FormatError(f"matrix {name!r}: shape {m.shape} disagrees with manifest {entry['shape']}")
        out[name] = m
    return out
