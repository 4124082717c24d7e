"""Command line entry point: ``mvlabel {label,eval,synth,visibility}``.

Exit codes: 0 success, 2 input error, 3 internal error. Errors are
reported on stderr as a single JSON object; stage timings of ``label``
are written to stderr as JSON lines.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .errors import GenerationError, InputError
from .evalap import DEFAULT_THRESHOLDS, evaluate_ap
from .pipeline import RunConfig, StageTimer, label_scene
from .scene_io import (LoadConfig, export_labeled_cloud, load_scene, read_ground_truth, read_predictions,
                       read_vocabulary, save_predictions)
from .synth import generate_scene, load_config, write_scene
from .visibility import VisibilityConfig, mask_visibility, oracle_mask_visibility

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3

logger = logging.getLogger("mvlabel")


class Stage:
    """Tracks the running stage so failures can name it."""

    name = "startup"


def _emit_timings(timings: dict, stream=None):
    stream = stream or sys.stderr
    for stage, secs in timings.items():
        stream.write(json.dumps({"stage": stage, "seconds": round(secs, 6)}) + "\n")
    stream.write(json.dumps({"stage": "total", "seconds": round(sum(timings.values()), 6)}) + "\n")


def cmd_label(args) -> int:
    cfg = RunConfig(topk=args.topk, tau_depth=args.tau_depth, nms_iou=args.nms,
                    frame_stride=args.frame_stride, depth_scale=args.depth_scale,
                    label_map_mode=args.label_map_mode, keep_unlabeled=args.keep_unlabeled,
                    threads=args.threads)
    timer = StageTimer()
    Stage.name = "load"
    with timer("load"):
        bundle = load_scene(args.scene, LoadConfig(cfg.depth_scale, cfg.frame_stride))
    Stage.name = "label"
    result = label_scene(bundle, cfg, timer)
    Stage.name = "save"
    out = Path(args.out) if args.out else Path(args.scene) / "predictions.json"
    with timer("save"):
        save_predictions(result.instances, out, result.diagnostics if cfg.keep_unlabeled else None)
        if args.export_ply:
            export_labeled_cloud(bundle.cloud, result.instances, args.export_ply)
    _emit_timings(timer.timings)
    logger.info("%d labeled instances, %d unlabeled proposals -> %s",
                len(result.instances), len(result.diagnostics), out)
    return EXIT_OK


def cmd_eval(args) -> int:
    Stage.name = "load"
    preds = read_predictions(args.pred)
    gts = read_ground_truth(args.gt)
    for p in preds:
        if p.class_id is not None and p.point_indices is None:
            raise InputError(f"{args.pred}: instance {p.proposal_id} carries no point_indices")
    prompts = read_vocabulary(Path(args.prompts)).prompts if args.prompts else None
    Stage.name = "eval"
    report = evaluate_ap(preds, gts, DEFAULT_THRESHOLDS)
    text = json.dumps(report.to_dict(prompts), indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    Stage.name = "config"
    try:
        cfg = load_config(args.config)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise InputError(f"{args.config}: invalid synth config ({e})") from None
    Stage.name = "generate"
    scene = generate_scene(cfg)
    Stage.name = "write"
    write_scene(scene, args.out)
    return EXIT_OK


def cmd_visibility(args) -> int:
    Stage.name = "load"
    bundle = load_scene(args.scene, LoadConfig(args.depth_scale, args.frame_stride))
    Stage.name = "visibility"
    vcfg = VisibilityConfig(args.tau_depth)
    if args.oracle:
        vis = oracle_mask_visibility(bundle.cloud, bundle.frames, bundle.depth_maps, bundle.proposals, vcfg)
    else:
        vis = mask_visibility(bundle.cloud, bundle.frames, bundle.depth_maps, bundle.proposals, vcfg)
    doc = {"frame_ids": bundle.frame_ids,
           "proposal_ids": list(range(len(bundle.proposals))),
           "fractions": vis.fractions.tolist()}
    text = json.dumps(doc)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvlabel", description="Open-vocabulary labels for 3D mask proposals.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    lab = sub.add_parser("label", help="label the proposals of a scene directory")
    lab.add_argument("scene")
    lab.add_argument("--out", help="predictions.json path (default: <scene>/predictions.json)")
    lab.add_argument("--topk", type=int, default=40)
    lab.add_argument("--tau-depth", type=float, default=0.10)
    lab.add_argument("--nms", type=float, default=0.5, help="proposal NMS IoU threshold")
    lab.add_argument("--frame-stride", type=int, default=1)
    lab.add_argument("--depth-scale", type=float, default=1000.0)
    lab.add_argument("--label-map-mode", choices=("LG", "HG"), default="LG")
    lab.add_argument("--keep-unlabeled", action="store_true")
    lab.add_argument("--threads", type=int, default=None)
    lab.add_argument("--export-ply", help="also write a class-colored point cloud")
    lab.set_defaults(func=cmd_label)

    ev = sub.add_parser("eval", help="average precision against ground truth")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--out")
    ev.add_argument("--prompts", help="prompts.json to name per-class rows")
    ev.set_defaults(func=cmd_eval)

    sy = sub.add_parser("synth", help="generate a synthetic scene directory")
    sy.add_argument("--config", required=True)
    sy.add_argument("--out", required=True)
    sy.set_defaults(func=cmd_synth)

    vi = sub.add_parser("visibility", help="dump the frames x proposals visibility matrix")
    vi.add_argument("scene")
    vi.add_argument("--out")
    vi.add_argument("--tau-depth", type=float, default=0.10)
    vi.add_argument("--frame-stride", type=int, default=1)
    vi.add_argument("--depth-scale", type=float, default=1000.0)
    vi.add_argument("--oracle", action="store_true", help="use the slow reference implementation")
    vi.set_defaults(func=cmd_visibility)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    Stage.name = "startup"
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except (InputError, GenerationError, ValueError) as e:
        sys.stderr.write(json.dumps({"error": {"type": type(e).__name__, "stage": Stage.name,
                                               "message": str(e)}}) + "\n")
        return EXIT_INPUT
    except Exception as e:  # noqa: BLE001 - top-level boundary
        logger.debug("internal error", exc_info=True)
        sys.stderr.write(json.dumps({"error": {"type": type(e).__name__, "stage": Stage.name,
                                               "message": str(e)}}) + "\n")
        return EXIT_INTERNAL
    logger.info("%s finished in %.3f s", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
