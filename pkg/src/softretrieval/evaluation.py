"""Localization metrics: IoU, true-positive rate and difficulty-level reports."""
from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

from .model import DIFFICULTIES, Box

IOU_REPORT_THRESHOLD = 0.4


class UndefinedMetricError(ValueError):
    pass


class FrameRangeError(ValueError):
    pass


def iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # areas from the same corner differences keep inter <= each area, so iou <= 1
    area_a = (a.x2 - a.x) * (a.y2 - a.y)
    area_b = (b.x2 - b.x) * (b.y2 - b.y)
    return inter / (area_a + area_b - inter)


def _evaluated_frames(gts: Mapping[int, Box | None], skip_frames: int) -> list[int]:
    return sorted(f for f, gt in gts.items() if gt is not None and f >= skip_frames)


def _check_coverage(results: Mapping[int, Box | None], frames: Sequence[int]) -> None:
    missing = [f for f in frames if f not in results]
    if missing:
        raise FrameRangeError(f"results do not cover evaluated frames {missing[:5]}"
                              f"{'...' if len(missing) > 5 else ''}")


def frame_ious(results: Mapping[int, Box | None], gts: Mapping[int, Box | None],
               skip_frames: int = 0) -> dict[int, float]:
    """IoU per evaluated frame; a frame with no retrieved box scores 0."""
    frames = _evaluated_frames(gts, skip_frames)
    _check_coverage(results, frames)
    return {f: (iou(results[f], gts[f]) if results[f] is not None else 0.0) for f in frames}


def tpr(results: Mapping[int, Box | None], gts: Mapping[int, Box | None],
        correct_iou_threshold: float = 0.4, skip_frames: int = 0) -> float:
    """Percentage of evaluated frames whose retrieved box overlaps GT by at least the threshold.

    Evaluated frames are those at or after ``skip_frames`` in which the
    target has ground truth.
    """
    scores = frame_ious(results, gts, skip_frames)
    if not scores:
        raise UndefinedMetricError("no evaluated frames: TPR is undefined")
    correct = sum(1 for f, s in scores.items() if results[f] is not None and s >= correct_iou_threshold)
    return 100.0 * correct / len(scores)


@dataclass(frozen=True)
class SequenceScore:
    sequence_id: str
    difficulty: str
    tpr_percent: float
    average_iou: float
    fraction_iou_ge_04: float
    evaluated_frame_count: int
    frame_ious: dict[int, float] = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class LevelScore:
    difficulty: str
    sequence_count: int
    tpr_percent: float
    average_iou: float
    fraction_iou_ge_04: float


@dataclass(frozen=True)
class EvaluationReport:
    theta: float
    skip_frames: int
    sequences: tuple[SequenceScore, ...]
    mean_tpr_percent: float
    mean_average_iou: float
    mean_fraction_iou_ge_04: float
    levels: tuple[LevelScore, ...]

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        for seq in doc["sequences"]:
            seq["frame_ious"] = {str(k): v for k, v in seq["frame_ious"].items()}
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "EvaluationReport":
        sequences = tuple(
            SequenceScore(**{**s, "frame_ious": {int(k): float(v) for k, v in s["frame_ious"].items()}})
            for s in doc["sequences"])
        return cls(
            theta=float(doc["theta"]),
            skip_frames=int(doc["skip_frames"]),
            sequences=sequences,
            mean_tpr_percent=float(doc["mean_tpr_percent"]),
            mean_average_iou=float(doc["mean_average_iou"]),
            mean_fraction_iou_ge_04=float(doc["mean_fraction_iou_ge_04"]),
            levels=tuple(LevelScore(**lv) for lv in doc["levels"]),
        )


@dataclass(frozen=True)
class SequenceOutcome:
    """What the report needs from one run: chosen and GT boxes per frame."""

    sequence_id: str
    difficulty: str
    results: Mapping[int, Box | None]
    gts: Mapping[int, Box | None]


def score_sequence(outcome: SequenceOutcome, theta: float = 0.4, skip_frames: int = 0) -> SequenceScore:
    extra = sorted(set(outcome.results) - set(outcome.gts))
    if extra:
        raise FrameRangeError(f"results contain frames {extra[:5]} beyond the annotated range")
    scores = frame_ious(outcome.results, outcome.gts, skip_frames)
    if not scores:
        raise UndefinedMetricError(f"sequence {outcome.sequence_id!r} has no evaluated frames")
    n = len(scores)
    return SequenceScore(
        sequence_id=outcome.sequence_id,
        difficulty=outcome.difficulty,
        tpr_percent=tpr(outcome.results, outcome.gts, theta, skip_frames),
        average_iou=sum(scores.values()) / n,
        fraction_iou_ge_04=sum(1 for s in scores.values() if s >= IOU_REPORT_THRESHOLD) / n,
        evaluated_frame_count=n,
        frame_ious=scores,
    )


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def report(outcomes: Sequence[SequenceOutcome], theta: float = 0.4,
           skip_frames: int = 0) -> EvaluationReport:
    if not outcomes:
        raise UndefinedMetricError("nothing to evaluate")
    scores = tuple(score_sequence(o, theta, skip_frames) for o in outcomes)
    by_level: dict[str, list[SequenceScore]] = defaultdict(list)
    for s in scores:
        by_level[s.difficulty].append(s)
    levels = tuple(
        LevelScore(
            difficulty=level,
            sequence_count=len(by_level[level]),
            tpr_percent=_mean([s.tpr_percent for s in by_level[level]]),
            average_iou=_mean([s.average_iou for s in by_level[level]]),
            fraction_iou_ge_04=_mean([s.fraction_iou_ge_04 for s in by_level[level]]),
        )
        for level in DIFFICULTIES if level in by_level)
    return EvaluationReport(
        theta=theta,
        skip_frames=skip_frames,
        sequences=scores,
        mean_tpr_percent=_mean([s.tpr_percent for s in scores]),
        mean_average_iou=_mean([s.average_iou for s in scores]),
        mean_fraction_iou_ge_04=_mean([s.fraction_iou_ge_04 for s in scores]),
        levels=levels,
    )


def write_report(path: str | os.PathLike, rep: EvaluationReport) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(rep.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def read_report(path: str | os.PathLike) -> EvaluationReport:
    with open(path, encoding="utf-8") as f:
        return EvaluationReport.from_dict(json.load(f))
