"""Linear soft-biometric filtering with IoU box regression as fallback.

Per frame, detections pass height -> torso colour -> gender filters. A
stage whose query attribute is unknown passes everything through. The
first time a single candidate remains it is accepted. If a stage leaves
no candidate, the previous frame's box is carried forward onto the
detection it overlaps most, provided a biometric match has happened
before in the sequence.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .attr import ColorClassifier, ColorVerdict, GenderClassifier, GenderVerdict
from .calib import CalibrationError, TsaiCamera, estimate_height, height_class_match
from .detect import Detection, DetectionProvider, EmptyMaskError, head_feet_points
from .evaluation import iou
from .model import UNKNOWN, Box, SemanticQuery
from .patch import torso_band

log = logging.getLogger(__name__)

BIOMETRIC = "biometric"
REGRESSION = "regression"
NONE = "none"
METHODS = (BIOMETRIC, REGRESSION, NONE)

# classifier failures that mean "this detection cannot be judged", not "abort"
_SOFT_ERRORS = (LookupError, ValueError)


@dataclass(frozen=True)
class CascadeConfig:
    height_margin_cm: float = 0.0
    regression_min_iou: float = 0.0
    skip_frames: int = 30
    early_exit: bool = True

    def __post_init__(self):
        if not 0.0 <= self.regression_min_iou < 1.0:
            raise ValueError("regression_min_iou must lie in [0, 1)")
        if self.skip_frames < 0:
            raise ValueError("skip_frames must be non-negative")


@dataclass(frozen=True)
class Classifiers:
    color: ColorClassifier
    gender: GenderClassifier


@dataclass(frozen=True)
class FrameResult:
    frame: int
    chosen: Box | None = None
    method: str = NONE
    color_rank: int | None = None
    stage_counts: tuple[int | None, int | None, int | None, int | None] = (None, None, None, None)
    tie_break_used: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if (self.chosen is None) != (self.method == NONE):
            raise ValueError("a box is chosen exactly when method is not 'none'")

    def to_record(self) -> dict:
        return {
            "frame": self.frame,
            "box": self.chosen.to_list() if self.chosen else None,
            "method": self.method,
            "color_rank": self.color_rank,
            "stage_counts": list(self.stage_counts),
            "tie_break_used": self.tie_break_used,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "FrameResult":
        box = rec["box"]
        return cls(
            frame=int(rec["frame"]),
            chosen=Box(*box) if box is not None else None,
            method=rec["method"],
            color_rank=rec["color_rank"],
            stage_counts=tuple(rec["stage_counts"]),
            tie_break_used=bool(rec["tie_break_used"]),
        )


@dataclass(frozen=True)
class CascadeState:
    last_confirmed: Box | None = None
    ever_matched: bool = False


def height_filter(dets: Sequence[Detection], query: SemanticQuery, cam: TsaiCamera,
                  cfg: CascadeConfig = CascadeConfig()) -> list[Detection]:
    return [dets[i] for i in _height_stage(dets, range(len(dets)), query, cam, cfg)]


def _height_stage(dets, idx: Iterable[int], query, cam, cfg) -> list[int]:
    idx = list(idx)
    if query.height_class == UNKNOWN:
        return idx
    kept = []
    for i in idx:
        try:
            head, feet = head_feet_points(dets[i])
            est = estimate_height(cam, head, feet)
        except (CalibrationError, EmptyMaskError) as exc:
            log.debug("height estimation failed for detection %d: %s", i, exc)
            continue
        if height_class_match(est.height_cm, query.height_class, cfg.height_margin_cm):
            kept.append(i)
    return kept


def color_filter(dets: Sequence[Detection], query: SemanticQuery, image: np.ndarray | None,
                 classifier: ColorClassifier, frame_index: int = 0,
                 ) -> tuple[list[Detection], int | None]:
    kept, rank = _color_stage(dets, range(len(dets)), query, image, classifier, frame_index)
    return [dets[i] for i in kept], rank


def _color_verdict(classifier, det, image, band, which, frame_index) -> ColorVerdict | None:
    try:
        return classifier.torso_color(det, image, band, which, frame_index)
    except _SOFT_ERRORS as exc:
        log.debug("colour classification failed: %s", exc)
        return None


def _color_stage(dets, idx, query, image, classifier, frame_index):
    idx = list(idx)
    if query.torso_color1 == UNKNOWN:
        return idx, None
    band = torso_band(query.torso_type)
    first = [i for i in idx
             if (v := _color_verdict(classifier, dets[i], image, band, "color1", frame_index))
             and v.label == query.torso_color1]
    if first:
        return first, 1
    if query.torso_color2 != UNKNOWN:
        second = [i for i in idx
                  if (v := _color_verdict(classifier, dets[i], image, band, "color2", frame_index))
                  and v.label == query.torso_color2]
        if second:
            return second, 2
    return [], None


def _gender_verdicts(dets, idx, image, classifier, frame_index) -> dict[int, GenderVerdict | None]:
    out = {}
    for i in idx:
        try:
            out[i] = classifier.gender(dets[i], image, frame_index)
        except _SOFT_ERRORS as exc:
            log.debug("gender classification failed for detection %d: %s", i, exc)
            out[i] = None
    return out


def gender_filter(dets: Sequence[Detection], query: SemanticQuery, image: np.ndarray | None,
                  classifier: GenderClassifier, frame_index: int = 0) -> list[Detection]:
    if query.gender == UNKNOWN:
        return list(dets)
    verdicts = _gender_verdicts(dets, range(len(dets)), image, classifier, frame_index)
    return [dets[i] for i, v in verdicts.items() if v is not None and v.label == query.gender]


def select_best(confidences: Sequence[float]) -> int:
    """Index of the highest confidence; the lowest index wins ties."""
    if not confidences:
        raise ValueError("select_best needs at least one candidate")
    best = 0
    for i, c in enumerate(confidences):
        if c > confidences[best]:
            best = i
    return best


def iou_regress(prev: Box, dets: Sequence[Detection], min_iou: float = 0.0) -> int | None:
    """Index of the detection overlapping ``prev`` most, if that overlap exceeds ``min_iou``."""
    best, best_score = None, min_iou
    for i, det in enumerate(dets):
        score = iou(prev, det.box)
        if score > best_score:
            best, best_score = i, score
    return best


def run_frame(state: CascadeState, frame_index: int, dets: Sequence[Detection],
              image: np.ndarray | None, query: SemanticQuery, cam: TsaiCamera,
              cfg: CascadeConfig, classifiers: Classifiers) -> tuple[FrameResult, CascadeState]:
    counts: list[int | None] = [len(dets), None, None, None]
    rank = None

    def accept(i: int, tie_break: bool = False):
        box = dets[i].box
        result = FrameResult(frame_index, box, BIOMETRIC, rank, tuple(counts), tie_break)
        return result, CascadeState(box, True)

    def fallback():
        if state.ever_matched and state.last_confirmed is not None:
            j = iou_regress(state.last_confirmed, dets, cfg.regression_min_iou)
            if j is not None:
                box = dets[j].box
                result = FrameResult(frame_index, box, REGRESSION, rank, tuple(counts))
                return result, replace(state, last_confirmed=box)
        return FrameResult(frame_index, None, NONE, rank, tuple(counts)), state

    if not dets:
        return fallback()

    cands = _height_stage(dets, range(len(dets)), query, cam, cfg)
    counts[1] = len(cands)
    if not cands:
        return fallback()
    if cfg.early_exit and len(cands) == 1:
        return accept(cands[0])

    cands, rank = _color_stage(dets, cands, query, image, classifiers.color, frame_index)
    counts[2] = len(cands)
    if not cands:
        return fallback()
    if cfg.early_exit and len(cands) == 1:
        return accept(cands[0])

    verdicts = _gender_verdicts(dets, cands, image, classifiers.gender, frame_index)
    if query.gender != UNKNOWN:
        cands = [i for i in cands if verdicts[i] is not None and verdicts[i].label == query.gender]
    counts[3] = len(cands)
    if not cands:
        return fallback()
    if len(cands) == 1:
        return accept(cands[0])
    confidences = [verdicts[i].confidence if verdicts[i] is not None else 0.0 for i in cands]
    return accept(cands[select_best(confidences)], tie_break=True)


ImageSource = Callable[[int], "np.ndarray | None"]


def run_sequence(frame_count: int, provider: DetectionProvider, images: ImageSource | None,
                 query: SemanticQuery, cam: TsaiCamera, cfg: CascadeConfig,
                 classifiers: Classifiers) -> list[FrameResult]:
    results = []
    state = CascadeState()
    for f in range(frame_count):
        if f < cfg.skip_frames:
            results.append(FrameResult(f))
            continue
        image = images(f) if images is not None else None
        result, state = run_frame(state, f, provider.detections_for(f), image, query, cam, cfg,
                                  classifiers)
        results.append(result)
    return results


def write_results(path: str | os.PathLike, results: Iterable[FrameResult]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in results:
            f.write(json.dumps(r.to_record(), separators=(",", ":")) + "\n")


def read_results(path: str | os.PathLike) -> list[FrameResult]:
    with open(path, encoding="utf-8") as f:
        return [FrameResult.from_record(json.loads(line)) for line in f if line.strip()]


def chosen_boxes(results: Iterable[FrameResult]) -> dict[int, Box | None]:
    return {r.frame: r.chosen for r in results}
