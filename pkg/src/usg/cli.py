"""``usg`` command line: merge, eval, demo, export-dot.

Exit codes: 0 success, 2 invalid input, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import io
from .dot import export_dot
from .graph import GraphValidationError, Modality, align_video_usg, merge_usg
from .metrics import evaluate
from .model.config import ModelConfig
from .model.params import init_params
from .model.pipeline import ModalityInput, Vocabulary, parse

EXIT_OK, EXIT_INPUT, EXIT_IO = 0, 2, 3

log = logging.getLogger("usg")


class InputError(Exception):
    pass


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _parse_ks(text: str) -> list[int]:
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad K list {text!r}")
    if not ks or any(k <= 0 for k in ks):
        raise argparse.ArgumentTypeError("K values must be positive integers")
    return ks


def _modality_map(items: list[str] | None, flag: str) -> dict[Modality, str]:
    out = {}
    for item in items or []:
        mod, sep, value = item.partition("=")
        if not sep:
            raise InputError(f"{flag} expects MODALITY=VALUE, got {item!r}")
        try:
            m = Modality(mod)
        except ValueError:
            raise InputError(f"{flag}: unknown modality {mod!r}") from None
        if m in out:
            raise InputError(f"{flag}: modality {mod} given twice")
        out[m] = value
    return out


# -- subcommands -------------------------------------------------------------

def cmd_merge(args) -> int:
    graphs = [io.scene_graph_from_dict(io.read_json(p)) for p in args.graphs]
    links = io.links_from_dict(io.read_json(args.links)) if args.links else []
    video = [g for g in graphs if g.modality is Modality.VIDEO]
    static = [g for g in graphs if g.modality is not Modality.VIDEO]
    if video and static:
        if len(video) > 1:
            raise GraphValidationError(["two graphs share modality video"])
        static_links = [l for l in links if Modality.VIDEO not in (l.a[0], l.b[0])]
        video_links = [l for l in links if Modality.VIDEO in (l.a[0], l.b[0])]
        usg = align_video_usg(merge_usg(static, static_links), video[0], video_links)
    else:
        usg = merge_usg(graphs, links)
    _write_text(args.out, io.dumps(io.usg_to_dict(usg)))
    log.info("merged %d graphs into %d nodes", len(graphs), len(usg.objects))
    return EXIT_OK


def cmd_eval(args) -> int:
    pred, gt = io.read_json(args.predictions), io.read_json(args.ground_truth)
    if not 0.0 < args.iou <= 1.0:
        raise InputError(f"--iou must lie in (0, 1], got {args.iou}")
    report = evaluate(pred, gt, args.k, args.iou, use_masks=not args.labels_only)
    _write_text(args.out, io.dumps(report))
    return EXIT_OK


def _load_config(args) -> ModelConfig:
    data = io.read_json(args.config) if args.config else {}
    config = ModelConfig.from_dict(data)
    overrides = {}
    if args.top_pairs is not None:
        overrides["top_k_pairs"] = args.top_pairs
    if args.assoc_threshold is not None:
        overrides["association_threshold"] = args.assoc_threshold
    return config.replace(**overrides) if overrides else config


def cmd_demo(args) -> int:
    config = _load_config(args)
    features = _modality_map(args.features, "--features")
    if not features:
        raise InputError("demo needs at least one --features MODALITY=FILE[,FILE...]")
    pixels = _modality_map(args.pixels, "--pixels")
    contexts = _modality_map(args.context, "--context")
    grids = _modality_map(args.grid, "--grid")
    inputs = []
    for m, paths in features.items():
        scales = tuple(io.read_matrix(p) for p in paths.split(",") if p)
        grid = None
        if m in grids:
            try:
                h, w = (int(v) for v in grids[m].lower().split("x"))
            except ValueError:
                raise InputError(f"--grid expects HxW, got {grids[m]!r}") from None
            grid = (h, w)
        inputs.append(ModalityInput(m, scales,
                                    io.read_matrix(pixels[m]) if m in pixels else None,
                                    io.read_matrix(contexts[m]) if m in contexts else None,
                                    grid))
    mods = [i.modality for i in inputs]
    params = io.load_params(args.params) if args.params else init_params(config, args.seed, mods)
    vocab = (Vocabulary.from_dict(io.read_json(args.vocab), config.embed_dim) if args.vocab
             else Vocabulary.toy(config.embed_dim, args.seed))
    result = parse(inputs, params, config, vocab)
    _write_text(args.out, io.dumps(io.usg_to_dict(result.usg)))
    if args.links_out:
        links = []
        for (a, b), triples in sorted(result.links.items(), key=lambda kv: (kv[0][0].priority, kv[0][1].priority)):
            links += [{"a": [a.value, f"q{i}"], "b": [b.value, f"q{j}"], "score": s} for i, j, s in triples]
        Path(args.links_out).write_text(io.dumps({"links": links}), encoding="utf-8")
    return EXIT_OK


def cmd_export_dot(args) -> int:
    usg = io.usg_from_dict(io.read_json(args.usg))
    _write_text(args.out, export_dot(usg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="usg", description="Universal scene graph toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("merge", help="merge per-modality scene graphs into a USG")
    p.add_argument("graphs", nargs="+", help="scene graph JSON files, one per modality")
    p.add_argument("--links", help="association JSON file")
    p.add_argument("-o", "--out", help="output USG JSON (default: stdout)")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("eval", help="score a prediction file against ground truth")
    p.add_argument("predictions")
    p.add_argument("ground_truth")
    p.add_argument("--k", type=_parse_ks, default=[20, 50, 100], help="comma-separated K values")
    p.add_argument("--iou", type=float, default=0.5, help="mask IoU threshold for triplet hits")
    p.add_argument("--labels-only", action="store_true", help="ignore masks (PredCls-style matching)")
    p.add_argument("-o", "--out", help="report JSON (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo", help="seeded forward pass from feature files to a USG")
    p.add_argument("--features", action="append", metavar="MOD=FILE[,FILE...]",
                   help="USGF feature files: scales for static modalities, frames for video")
    p.add_argument("--pixels", action="append", metavar="MOD=FILE", help="per-pixel/point features for masks")
    p.add_argument("--context", action="append", metavar="MOD=FILE", help="context features for relations")
    p.add_argument("--grid", action="append", metavar="MOD=HxW", help="mask grid shape for image/video")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON ModelConfig overrides")
    p.add_argument("--params", help="parameter manifest (params.json); default: seeded init")
    p.add_argument("--vocab", help="JSON vocabulary with object/predicate embeddings")
    p.add_argument("--top-pairs", type=int, help="relation proposals kept per modality")
    p.add_argument("--assoc-threshold", type=float, help="minimum association score")
    p.add_argument("--links-out", help="also write the inferred association links here")
    p.add_argument("-o", "--out", help="output USG JSON (default: stdout)")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("export-dot", help="render a USG JSON file as Graphviz DOT")
    p.add_argument("usg")
    p.add_argument("-o", "--out", help="output DOT file (default: stdout)")
    p.set_defaults(func=cmd_export_dot)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = logging.getLevelName(os.environ.get("USG_LOG", "WARNING").upper())
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GraphValidationError as exc:
        for v in exc.violations:
            print(f"error: {v}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, io.FormatError, ValueError, KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
