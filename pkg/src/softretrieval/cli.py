"""Command-line front end.

Subcommands::

    retrieve   run the filtering cascade over one or more sequences
    evaluate   score results streams against annotations (JSON report,
               tab-separated table on stdout, optional figures)
    synth      render a scenario document into frames + detections + annotations
    height     metric height from head/feet pixels
    patch      extract a torso/leg patch and print the band report
    augment    gamma-adjust an image

File formats
------------
annotations   {sequence_id, difficulty, image_size:[w,h], target_person_id,
               frames:[{index, persons:[{person_id, markers:{head:[x,y], ...},
               attributes:{...}}]}]}
calibration   {rotation:[9 row-major], translation_cm:[3], focal_mm,
               kappa1_per_mm2, center_px:[2], sx, pixel_size_mm:[2],
               image_size_px:[2]}
query         {height_class, torso_type, torso_color1, torso_color2, gender}
detections    one JSON record per line: {frame, detections:[{box:[x,y,w,h],
               score, mask_rle:[counts], mask_size:[w,h], person_id?}]}
results       one JSON record per line: {frame, box:[x,y,w,h]|null, method,
               color_rank, stage_counts:[d,h,c,g], tie_break_used}
frames        binary PPM files named by zero-padded index (000000.ppm)
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from . import __version__
from .attr import (
    DEFAULT_MIN_PIXELS, ColorPrototypeTable, OracleColorClassifier, OracleGenderClassifier,
    ReferenceColorClassifier, classify_color,
)
from .calib import TsaiCamera, estimate_height
from .cascade import CascadeConfig, Classifiers, chosen_boxes, read_results, run_sequence, write_results
from .detect import Detection, OracleNoise, OracleProvider, box_mask, load_detections_stream
from .evaluation import SequenceOutcome, report, write_report
from .model import Box, parse_query, parse_sequence, query_from_target
from .patch import extract_patch, gamma_adjust_image, leg_band, torso_band
from .pixmap import read_ppm, write_ppm
from .synth import frame_filename, load_scenario, write_scene

log = logging.getLogger("softretrieval")


class UsageError(Exception):
    pass


def _load_json(path: str):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _pair(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {text!r}") from None
    return x, y


def _box(text: str) -> Box:
    try:
        return Box(*(float(v) for v in text.split(",")))
    except (TypeError, ValueError):
        raise argparse.ArgumentTypeError(f"expected 'x,y,w,h' with w, h > 0, got {text!r}") from None


def _require_files(*paths: str | None) -> None:
    for p in paths:
        if p is not None and not os.path.exists(p):
            raise UsageError(f"file not found: {p}")


# ---------------------------------------------------------------- retrieve

@dataclass(frozen=True)
class RunConfig:
    annotations: str
    calibration: str
    output: str
    frames: str | None = None
    detections: str | None = None
    oracle: bool = False
    query: str | None = None
    classifier: str = "reference"
    color_table: str | None = None
    min_pixels: int = DEFAULT_MIN_PIXELS
    min_score: float = 0.5
    seed: int = 0
    gender_error: float = 0.0
    color_error: float = 0.0
    jitter: float = 0.0
    drop: float = 0.0
    merge_iou: float | None = None
    cascade: CascadeConfig = CascadeConfig()

    def validate(self) -> None:
        if self.oracle == (self.detections is not None):
            raise UsageError("give exactly one detection source: --detections FILE or --oracle")
        _require_files(self.annotations, self.calibration, self.detections, self.query,
                       self.color_table, self.frames)
        if self.classifier == "reference" and self.frames is None:
            raise UsageError("the reference colour classifier needs --frames")


def _frame_reader(frames_dir: str):
    def read(f: int):
        path = os.path.join(frames_dir, frame_filename(f))
        return read_ppm(path) if os.path.exists(path) else None
    return read


def run_retrieval(cfg: RunConfig) -> str:
    cfg.validate()
    seq = parse_sequence(_load_json(cfg.annotations))
    cam = TsaiCamera.from_dict(_load_json(cfg.calibration))
    query = parse_query(_load_json(cfg.query)) if cfg.query else query_from_target(seq)
    if cfg.oracle:
        provider = OracleProvider(seq, OracleNoise(cfg.jitter, cfg.drop, cfg.merge_iou, cfg.seed))
    else:
        provider = load_detections_stream(cfg.detections, cfg.min_score)

    if cfg.classifier == "oracle":
        color = OracleColorClassifier(seq, cfg.color_error, cfg.seed)
    else:
        table = ColorPrototypeTable.load(cfg.color_table) if cfg.color_table else None
        color = ReferenceColorClassifier(table, cfg.min_pixels)
    classifiers = Classifiers(color, OracleGenderClassifier(seq, cfg.gender_error, cfg.seed))

    images = _frame_reader(cfg.frames) if cfg.frames is not None else None
    results = run_sequence(seq.frame_count, provider, images, query, cam, cfg.cascade, classifiers)
    write_results(cfg.output, results)
    n_found = sum(1 for r in results if r.chosen is not None)
    log.info("%s: %d/%d frames with a retrieved box", seq.sequence_id, n_found, len(results))
    return cfg.output


def _scene_config(scene_dir: str, output: str, base: RunConfig) -> RunConfig:
    def opt(name):
        p = os.path.join(scene_dir, name)
        return p if os.path.exists(p) else None

    return RunConfig(
        annotations=os.path.join(scene_dir, "annotations.json"),
        calibration=os.path.join(scene_dir, "calibration.json"),
        output=output,
        frames=opt("frames"),
        detections=None if base.oracle else os.path.join(scene_dir, "detections.jsonl"),
        oracle=base.oracle,
        query=opt("query.json"),
        classifier=base.classifier, color_table=base.color_table, min_pixels=base.min_pixels,
        min_score=base.min_score, seed=base.seed, gender_error=base.gender_error,
        color_error=base.color_error, jitter=base.jitter, drop=base.drop,
        merge_iou=base.merge_iou, cascade=base.cascade,
    )


def cmd_retrieve(args) -> int:
    cascade = CascadeConfig(height_margin_cm=args.height_margin, regression_min_iou=args.min_iou,
                            skip_frames=args.skip_frames, early_exit=not args.full_cascade)
    base = RunConfig(
        annotations=args.annotations or "", calibration=args.calibration or "",
        output=args.output or "", frames=args.frames, detections=args.detections,
        oracle=args.oracle, query=args.query, classifier=args.classifier,
        color_table=args.color_table, min_pixels=args.min_pixels, min_score=args.min_score,
        seed=args.seed, gender_error=args.gender_error, color_error=args.color_error,
        jitter=args.jitter, drop=args.drop, merge_iou=args.merge_iou, cascade=cascade,
    )
    if not args.scene:
        if not (args.annotations and args.calibration and args.output):
            raise UsageError("retrieve needs --annotations, --calibration and --output "
                             "(or one or more --scene directories)")
        run_retrieval(base)
        print(args.output)
        return 0

    if not args.output_dir:
        raise UsageError("--scene requires --output-dir")
    os.makedirs(args.output_dir, exist_ok=True)
    configs = []
    for scene in args.scene:
        seq_id = os.path.basename(os.path.normpath(scene))
        out = os.path.join(args.output_dir, f"{seq_id}.results.jsonl")
        cfg = _scene_config(scene, out, base)
        cfg.validate()
        configs.append(cfg)
    if args.jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outputs = list(pool.map(run_retrieval, configs))
    else:
        outputs = [run_retrieval(c) for c in configs]
    for out in outputs:
        print(out)
    return 0


# ---------------------------------------------------------------- evaluate

def cmd_evaluate(args) -> int:
    pairs = list(args.pair or [])
    if args.results or args.annotations:
        if not (args.results and args.annotations):
            raise UsageError("--results and --annotations go together")
        pairs.append((args.results, args.annotations))
    if not pairs:
        raise UsageError("nothing to evaluate: give --results/--annotations or --pair")
    outcomes = []
    for results_path, ann_path in pairs:
        _require_files(results_path, ann_path)
        seq = parse_sequence(_load_json(ann_path))
        results = chosen_boxes(read_results(results_path))
        gts = {f: seq.target_box(f) for f in range(seq.frame_count)}
        outcomes.append(SequenceOutcome(seq.sequence_id, seq.difficulty, results, gts))
    rep = report(outcomes, args.theta, args.skip_frames)
    write_report(args.output, rep)
    if args.figures:
        from .plotting import write_report_figures
        for path in write_report_figures(rep, args.figures):
            log.info("wrote %s", path)

    print("sequence\tdifficulty\tframes\ttpr_percent\taverage_iou\tfraction_iou_ge_04")
    for s in rep.sequences:
        print(f"{s.sequence_id}\t{s.difficulty}\t{s.evaluated_frame_count}\t"
              f"{s.tpr_percent:.2f}\t{s.average_iou:.4f}\t{s.fraction_iou_ge_04:.4f}")
    print(f"ALL\t-\t{sum(s.evaluated_frame_count for s in rep.sequences)}\t"
          f"{rep.mean_tpr_percent:.2f}\t{rep.mean_average_iou:.4f}\t{rep.mean_fraction_iou_ge_04:.4f}")
    return 0


# ---------------------------------------------------------------- small tools

def cmd_synth(args) -> int:
    _require_files(args.scenario)
    seq = write_scene(load_scenario(args.scenario), args.output_dir)
    print(json.dumps({"scenario": args.scenario, "output_dir": args.output_dir,
                      "sequence_id": seq.sequence_id, "frame_count": seq.frame_count}))
    return 0


def cmd_height(args) -> int:
    _require_files(args.calibration)
    cam = TsaiCamera.from_dict(_load_json(args.calibration))
    est = estimate_height(cam, args.head, args.feet)
    print(json.dumps({"head": list(args.head), "feet": list(args.feet),
                      "height_cm": est.height_cm, "residual_cm": est.residual_cm}))
    return 0


def _patch_detection(args, image) -> Detection:
    if args.detections:
        _require_files(args.detections)
        provider = load_detections_stream(args.detections, min_score=0.0)
        dets = provider.detections_for(args.frame)
        if not 0 <= args.index < len(dets):
            raise UsageError(f"frame {args.frame} has {len(dets)} detections; no index {args.index}")
        return dets[args.index]
    if args.box is None:
        raise UsageError("patch needs --box or --detections/--frame/--index")
    h, w = image.shape[:2]
    box = args.box.clip(w, h)
    if box is None:
        raise UsageError("box lies outside the image")
    return Detection(box, box_mask(box, w, h))


def cmd_patch(args) -> int:
    _require_files(args.image)
    image = read_ppm(args.image)
    det = _patch_detection(args, image)
    if args.leg_type:
        kind, label, band = "leg", args.leg_type, leg_band(args.leg_type)
    else:
        kind, label, band = "torso", args.torso_type, torso_band(args.torso_type)
    patch = extract_patch(image, det, band)
    verdict = classify_color(patch)
    rec = {
        "image": args.image,
        "kind": kind,
        "type": label,
        "band": [band.r1, band.r2],
        "rows": list(band.rows(patch.source_box)),
        "box": patch.source_box.to_list(),
        "pixel_count": len(patch),
        "color": verdict.label,
        "confidence": verdict.confidence,
    }
    if args.output:
        write_ppm(args.output, patch.to_image())
        rec["output"] = args.output
    print(json.dumps(rec))
    return 0


def cmd_augment(args) -> int:
    _require_files(args.image)
    image = read_ppm(args.image)
    os.makedirs(args.output_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    for g in args.gamma:
        out = os.path.join(args.output_dir, f"{stem}_gamma{g:g}.ppm")
        write_ppm(out, gamma_adjust_image(image, g))
        print(json.dumps({"image": args.image, "gamma": g, "output": out}))
    return 0


# ---------------------------------------------------------------- parser

def _label(text: str) -> str:
    return " ".join(text.lower().replace("_", " ").split())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softretrieval", description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("retrieve", help="locate the described person in each frame")
    p.add_argument("--annotations")
    p.add_argument("--calibration")
    p.add_argument("--frames", help="directory of NNNNNN.ppm frames")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--detections", help="detections stream (JSON lines)")
    src.add_argument("--oracle", action="store_true", help="derive detections from annotations")
    p.add_argument("--query", help="query document; default: the target's annotated attributes")
    p.add_argument("--output", help="results stream to write")
    p.add_argument("--scene", action="append", help="synth-layout directory (repeatable)")
    p.add_argument("--output-dir", help="results directory when using --scene")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--classifier", choices=("reference", "oracle"), default="reference",
                   help="colour classifier; gender always comes from the annotation oracle")
    p.add_argument("--color-table", help="colour rule table document")
    p.add_argument("--min-pixels", type=int, default=DEFAULT_MIN_PIXELS)
    p.add_argument("--min-score", type=float, default=0.5)
    p.add_argument("--skip-frames", type=int, default=30)
    p.add_argument("--height-margin", type=float, default=0.0)
    p.add_argument("--min-iou", type=float, default=0.0, help="regression needs IoU strictly above this")
    p.add_argument("--full-cascade", action="store_true", help="disable singleton early exit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gender-error", type=float, default=0.0)
    p.add_argument("--color-error", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=0.0, help="oracle box jitter (pixels)")
    p.add_argument("--drop", type=float, default=0.0, help="oracle detection drop probability")
    p.add_argument("--merge-iou", type=float, default=None, help="oracle occlusion merge threshold")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("evaluate", help="score results against ground truth")
    p.add_argument("--results")
    p.add_argument("--annotations")
    p.add_argument("--pair", nargs=2, action="append", metavar=("RESULTS", "ANNOTATIONS"))
    p.add_argument("--theta", type=float, default=0.4, help="IoU counted as a correct retrieval")
    p.add_argument("--skip-frames", type=int, default=30)
    p.add_argument("--output", required=True, help="report document to write")
    p.add_argument("--figures", help="directory for PNG figures")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="render a synthetic scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("height", help="estimate height from head/feet pixels")
    p.add_argument("--calibration", required=True)
    p.add_argument("--head", type=_pair, required=True, metavar="X,Y")
    p.add_argument("--feet", type=_pair, required=True, metavar="X,Y")
    p.set_defaults(func=cmd_height)

    p = sub.add_parser("patch", help="extract a clothing patch")
    p.add_argument("--image", required=True)
    p.add_argument("--box", type=_box, metavar="X,Y,W,H")
    p.add_argument("--detections")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--index", type=int, default=0)
    kind = p.add_mutually_exclusive_group()
    kind.add_argument("--torso-type", type=_label, default="unknown")
    kind.add_argument("--leg-type", type=_label)
    p.add_argument("--output", help="PPM file for the patch")
    p.set_defaults(func=cmd_patch)

    p = sub.add_parser("augment", help="gamma-adjust an image")
    p.add_argument("--image", required=True)
    p.add_argument("--gamma", type=float, action="append", required=True)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_augment)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, OSError, ValueError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
