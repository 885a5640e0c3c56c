"""Person detections: masks, RLE codec, head/feet extraction and providers.

Pixel ``(c, r)`` has its centre at the continuous coordinate ``(c, r)``,
so a box ``[x, x + w)`` covers the columns whose index falls inside it.
Masks are frame-aligned boolean grids of shape ``(height, width)``.
"""
from __future__ import annotations

import json
import math
import os
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Protocol, Sequence

import numpy as np

from .evaluation import iou
from .model import Box, PersonAnnotation, SequenceAnnotation, ground_truth_box


class MaskFormatError(ValueError):
    pass


class EmptyMaskError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise MaskFormatError(f"mask must be 2-D, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        return isinstance(other, Mask) and np.array_equal(self.bits, other.bits)


def box_pixel_span(box: Box) -> tuple[int, int, int, int]:
    """Column/row index ranges ``(c0, c1, r0, r1)`` (half-open) of pixel centres in ``box``."""
    return (math.ceil(box.x), math.ceil(box.x2), math.ceil(box.y), math.ceil(box.y2))


def box_mask(box: Box, width: int, height: int) -> Mask:
    c0, c1, r0, r1 = box_pixel_span(box)
    bits = np.zeros((height, width), dtype=bool)
    bits[max(r0, 0):max(min(r1, height), 0), max(c0, 0):max(min(c1, width), 0)] = True
    return Mask(bits)


@dataclass(frozen=True, eq=False)
class Detection:
    box: Box
    mask: Mask
    source_person_id: str | None = None
    detector_score: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.detector_score <= 1.0:
            raise ValueError(f"detector_score {self.detector_score} outside [0, 1]")
        bits = self.mask.bits
        x0, x1 = max(math.floor(self.box.x), 0), max(math.ceil(self.box.x2), 0)
        y0, y1 = max(math.floor(self.box.y), 0), max(math.ceil(self.box.y2), 0)
        if np.count_nonzero(bits[y0:y1, x0:x1]) != np.count_nonzero(bits):
            raise MaskFormatError("mask has set bits outside the detection box")


class DetectionProvider(Protocol):
    def detections_for(self, frame_index: int) -> list[Detection]: ...


def encode_rle(mask: Mask) -> list[int]:
    """Row-major run lengths alternating 0-runs and 1-runs, starting with a 0-run."""
    flat = mask.bits.ravel().astype(np.int8)
    if flat.size == 0:
        return [0]
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0] == 1:
        counts.insert(0, 0)
    return counts


def decode_rle(counts: Sequence[int], width: int, height: int) -> Mask:
    if any(int(c) < 0 for c in counts):
        raise MaskFormatError("run lengths must be non-negative")
    total = sum(int(c) for c in counts)
    if total != width * height:
        raise MaskFormatError(f"run lengths sum to {total}, expected {width}x{height}={width * height}")
    values = np.arange(len(counts)) % 2 == 1
    flat = np.repeat(values, np.asarray(counts, dtype=np.int64))
    return Mask(flat.reshape(height, width))


def head_feet_points(det: Detection) -> tuple[tuple[float, float], tuple[float, float]]:
    """Mean-x of the set bits in the top and bottom mask rows, with those rows' y."""
    rows = np.flatnonzero(det.mask.bits.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("detection mask has no set bits")
    top, bottom = int(rows[0]), int(rows[-1])
    head_x = float(np.flatnonzero(det.mask.bits[top]).mean())
    feet_x = float(np.flatnonzero(det.mask.bits[bottom]).mean())
    return (head_x, float(top)), (feet_x, float(bottom))


@dataclass(frozen=True)
class OracleNoise:
    """Seeded corruption applied to annotation-derived detections.

    ``jitter_px`` moves each box edge by up to that many pixels,
    ``p_drop`` removes detections, and ``merge_iou`` (when set) fuses
    overlapping persons into a single box as an occlusion stand-in.
    """

    jitter_px: float = 0.0
    p_drop: float = 0.0
    merge_iou: float | None = None
    seed: int = 0


def frame_rng(seed: int, frame_index: int, *tags: str | int) -> np.random.Generator:
    """Generator keyed on (seed, frame, tags) so draws do not depend on call order."""
    key = [int(seed) & 0xFFFFFFFF, int(frame_index)]
    key += [zlib.crc32(t.encode()) if isinstance(t, str) else int(t) for t in tags]
    return np.random.default_rng(key)


def oracle_detections(frame_persons: Sequence[PersonAnnotation],
                      noise: OracleNoise = OracleNoise(), *,
                      image_size: tuple[int, int], frame_index: int = 0) -> list[Detection]:
    width, height = image_size
    rng = frame_rng(noise.seed, frame_index, "oracle")
    entries: list[tuple[Box, str]] = []
    for person in frame_persons:
        box = ground_truth_box(person.markers)
        jitter = rng.uniform(-1.0, 1.0, size=4) * noise.jitter_px
        drop = rng.random() < noise.p_drop
        if noise.jitter_px > 0:
            x1, y1 = box.x + jitter[0], box.y + jitter[1]
            x2, y2 = box.x2 + jitter[2], box.y2 + jitter[3]
            if x2 > x1 and y2 > y1:
                box = Box.from_corners(x1, y1, x2, y2)
        if not drop:
            entries.append((box, person.person_id))

    if noise.merge_iou is not None:
        entries = _merge_overlapping(entries, noise.merge_iou)

    detections = []
    for box, pid in entries:
        clipped = box.clip(width, height)
        if clipped is None:
            continue
        mask = box_mask(clipped, width, height)
        if mask.count() == 0:
            continue
        detections.append(Detection(clipped, mask, pid, 1.0))
    return detections


def _merge_overlapping(entries: list[tuple[Box, str]], threshold: float) -> list[tuple[Box, str]]:
    merged = list(entries)
    changed = True
    while changed:
        changed = False
        for i in range(len(merged)):
            for j in range(i + 1, len(merged)):
                (a, pa), (b, pb) = merged[i], merged[j]
                if iou(a, b) > threshold:
                    union = Box.from_corners(min(a.x, b.x), min(a.y, b.y),
                                             max(a.x2, b.x2), max(a.y2, b.y2))
                    # the larger box is nearer the camera and owns the merged blob
                    owner = pa if a.area >= b.area else pb
                    merged[i] = (union, owner)
                    del merged[j]
                    changed = True
                    break
            if changed:
                break
    return merged


class OracleProvider:
    """Detections derived from annotations (full-box masks)."""

    def __init__(self, seq: SequenceAnnotation, noise: OracleNoise = OracleNoise()):
        self.seq = seq
        self.noise = noise

    def detections_for(self, frame_index: int) -> list[Detection]:
        if not 0 <= frame_index < self.seq.frame_count:
            return []
        return oracle_detections(self.seq.frames[frame_index], self.noise,
                                 image_size=self.seq.image_size, frame_index=frame_index)


@dataclass
class StreamProvider:
    """Pre-computed detections, e.g. loaded from a detections stream file."""

    frames: dict[int, list[Detection]] = field(default_factory=dict)
    min_score: float = 0.5

    def detections_for(self, frame_index: int) -> list[Detection]:
        return [d for d in self.frames.get(frame_index, []) if d.detector_score >= self.min_score]


def detection_to_record(det: Detection) -> dict:
    record = {
        "box": det.box.to_list(),
        "score": det.detector_score,
        "mask_rle": encode_rle(det.mask),
        "mask_size": [det.mask.width, det.mask.height],
    }
    if det.source_person_id is not None:
        record["person_id"] = det.source_person_id
    return record


def detection_from_record(rec: dict) -> Detection:
    try:
        w, h = rec["mask_size"]
        mask = decode_rle(rec["mask_rle"], int(w), int(h))
        box = Box(*(float(v) for v in rec["box"]))
        return Detection(box, mask, rec.get("person_id"), float(rec.get("score", 1.0)))
    except (KeyError, TypeError) as exc:
        raise MaskFormatError(f"malformed detection record: {exc}") from exc


def write_detections_stream(path: str | os.PathLike,
                            frames: Iterable[tuple[int, list[Detection]]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for frame_index, dets in frames:
            rec = {"frame": frame_index, "detections": [detection_to_record(d) for d in dets]}
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")


def iter_detections_stream(path: str | os.PathLike) -> Iterator[tuple[int, list[Detection]]]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                yield int(rec["frame"]), [detection_from_record(d) for d in rec["detections"]]
            except (ValueError, KeyError) as exc:
                raise MaskFormatError(f"{path}:{lineno}: {exc}") from exc


def load_detections_stream(path: str | os.PathLike, min_score: float = 0.5) -> StreamProvider:
    return StreamProvider(dict(iter_detections_stream(path)), min_score)
