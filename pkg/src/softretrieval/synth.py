"""Synthetic calibrated surveillance scenes with exact ground truth.

Each person is a flat, camera-facing billboard standing on the ground
plane. Its top and bottom come from projecting the head and feet points;
its width is a fixed fraction of its projected height. Rows are painted
by clothing band (skin above the torso, torso colour, leg colour, dark
shoes), and nearer billboards overwrite farther ones.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .attr import CANONICAL_SWATCHES
from .calib import BehindCameraError, TsaiCamera, project
from .detect import Detection, Mask, box_pixel_span, write_detections_stream
from .model import (
    DIFFICULTIES, HEIGHT_RANGES, UNKNOWN, BodyMarkers, Box, PersonAnnotation,
    SequenceAnnotation, normalize_label, query_from_target, serialize_sequence,
)
from .patch import gamma_adjust_image, leg_band, torso_band
from .pixmap import write_ppm

DEFAULT_MARKER_FRACTIONS = {"neck": 0.10, "shoulder": 0.18, "waist": 0.50}
SHOE_COLOR = "black"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioPerson:
    person_id: str
    true_height_cm: float
    trajectory: tuple[tuple[float, float] | None, ...]
    torso_type: str = "short sleeve"
    torso_color1: str = "blue"
    torso_color2: str = UNKNOWN
    leg_type: str = "long pants"
    leg_color: str = "black"
    gender: str = "male"
    width_to_height_ratio: float = 0.3

    def position(self, frame_index: int) -> tuple[float, float] | None:
        if 0 <= frame_index < len(self.trajectory):
            return self.trajectory[frame_index]
        return None


@dataclass(frozen=True)
class Scenario:
    camera: TsaiCamera
    persons: tuple[ScenarioPerson, ...]
    frame_count: int
    target_person_id: str
    sequence_id: str = "synthetic"
    difficulty: str = "easy"
    background_color: tuple[int, int, int] = (90, 110, 95)
    seed: int = 0
    gamma: float | None = None
    marker_fractions: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_MARKER_FRACTIONS))

    @property
    def image_size(self) -> tuple[int, int]:
        return self.camera.image_size_px


@dataclass(frozen=True, eq=False)
class RenderedFrame:
    image: np.ndarray
    detections: list[Detection]
    persons: tuple[PersonAnnotation, ...]
    occluded: frozenset[str]   # ids whose billboard is partly hidden by another person


def height_class_for(height_cm: float) -> str:
    """Height class whose range centre is nearest (lower class on ties)."""
    inside = [(abs(height_cm - (lo + hi) / 2), label)
              for label, (lo, hi) in HEIGHT_RANGES.items() if lo <= height_cm <= hi]
    if not inside:
        return UNKNOWN
    return min(inside, key=lambda t: t[0])[1]


def _trajectory(doc: Any, frame_count: int, path: str) -> tuple:
    if isinstance(doc, list):
        if len(doc) != frame_count:
            raise ScenarioError(f"{path}: expected {frame_count} entries, got {len(doc)}")
        return tuple(None if p is None else (float(p[0]), float(p[1])) for p in doc)
    if isinstance(doc, Mapping):
        first = int(doc.get("first_frame", 0))
        last = int(doc.get("last_frame", frame_count - 1))
        (x0, y0), (x1, y1) = doc["start"], doc.get("end", doc["start"])
        out: list[tuple[float, float] | None] = []
        for f in range(frame_count):
            if first <= f <= last:
                t = 0.0 if last == first else (f - first) / (last - first)
                out.append((x0 + t * (x1 - x0), y0 + t * (y1 - y0)))
            else:
                out.append(None)
        return tuple(out)
    raise ScenarioError(f"{path}: trajectory must be a list or a start/end object")


def _rgb(value: Any, path: str) -> tuple[int, int, int]:
    if isinstance(value, str):
        label = normalize_label(value, "torso_color", path)
        if label == UNKNOWN:
            raise ScenarioError(f"{path}: colour must be known")
        return CANONICAL_SWATCHES[label]
    if isinstance(value, (list, tuple)) and len(value) == 3:
        return tuple(int(v) for v in value)
    raise ScenarioError(f"{path}: expected a colour label or [r, g, b]")


def parse_scenario(doc: Mapping[str, Any]) -> Scenario:
    try:
        frame_count = int(doc["frame_count"])
        camera = TsaiCamera.from_dict(doc["camera"])
        persons = []
        for i, p in enumerate(doc["persons"]):
            path = f"persons[{i}]"
            height = float(p["true_height_cm"])
            if not 130.0 <= height <= 210.0:
                raise ScenarioError(f"{path}: height {height} outside [130, 210] cm")
            persons.append(ScenarioPerson(
                person_id=str(p["person_id"]),
                true_height_cm=height,
                trajectory=_trajectory(p["trajectory"], frame_count, f"{path}.trajectory"),
                torso_type=normalize_label(p.get("torso_type", "short sleeve"), "torso_type"),
                torso_color1=normalize_label(p.get("torso_color1", "blue"), "torso_color"),
                torso_color2=normalize_label(p.get("torso_color2"), "torso_color"),
                leg_type=normalize_label(p.get("leg_type", "long pants"), "leg_type"),
                leg_color=normalize_label(p.get("leg_color", "black"), "leg_color"),
                gender=normalize_label(p.get("gender", "male"), "gender"),
                width_to_height_ratio=float(p.get("width_to_height_ratio", 0.3)),
            ))
        difficulty = doc.get("difficulty", "easy")
        if difficulty not in DIFFICULTIES:
            raise ScenarioError(f"difficulty must be one of {DIFFICULTIES}")
        target = str(doc["target_person_id"])
        if target not in {p.person_id for p in persons}:
            raise ScenarioError(f"target {target!r} is not among the persons")
        gamma = doc.get("gamma")
        return Scenario(
            camera=camera,
            persons=tuple(persons),
            frame_count=frame_count,
            target_person_id=target,
            sequence_id=str(doc.get("sequence_id", "synthetic")),
            difficulty=difficulty,
            background_color=_rgb(doc.get("background_color", [90, 110, 95]), "background_color"),
            seed=int(doc.get("seed", 0)),
            gamma=None if gamma is None else float(gamma),
            marker_fractions={**DEFAULT_MARKER_FRACTIONS, **doc.get("marker_fractions", {})},
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario document missing field {exc}") from exc


def load_scenario(path: str | os.PathLike) -> Scenario:
    with open(path, encoding="utf-8") as f:
        return parse_scenario(json.load(f))


@dataclass
class _Billboard:
    person: ScenarioPerson
    depth: float
    box: Box            # unclipped image-space rectangle
    head: tuple[float, float]
    feet: tuple[float, float]


def _billboard(cam: TsaiCamera, person: ScenarioPerson, pos: tuple[float, float]) -> _Billboard | None:
    x, y = pos
    try:
        hx, hy = project(cam, (x, y, person.true_height_cm))
        fx, fy = project(cam, (x, y, 0.0))
    except BehindCameraError:
        return None
    if not fy > hy:
        return None
    depth = float((cam.rotation @ np.array([x, y, 0.0]) + cam.translation_cm)[2])
    h = fy - hy
    w = person.width_to_height_ratio * h
    return _Billboard(person, depth, Box(fx - w / 2, hy, w, h), (hx, hy), (fx, fy))


def _row_colors(bb: _Billboard, height: int) -> np.ndarray:
    """Colour per image row of the billboard (rows outside get background later)."""
    p = bb.person
    rows = np.zeros((height, 3), dtype=np.uint8)
    t0, t1 = torso_band(p.torso_type).rows(bb.box)
    _, l1 = leg_band(p.leg_type).rows(bb.box)
    skin = CANONICAL_SWATCHES["skin"]
    torso = CANONICAL_SWATCHES.get(p.torso_color1, CANONICAL_SWATCHES["grey"])
    legs = CANONICAL_SWATCHES.get(p.leg_color, CANONICAL_SWATCHES["grey"])
    for r in range(height):
        if r < t0:
            rows[r] = skin
        elif r < t1:
            rows[r] = torso
        elif r < max(l1, t1):
            rows[r] = legs
        else:
            rows[r] = CANONICAL_SWATCHES[SHOE_COLOR]
    return rows


def _markers(bb: _Billboard, fractions: Mapping[str, float], size: tuple[int, int]) -> BodyMarkers:
    w, h = size
    box = bb.box

    def clamp(px: float, py: float) -> tuple[float, float]:
        return (min(max(px, 0.0), float(w)), min(max(py, 0.0), float(h)))

    def pair(frac: float):
        yy = box.y + frac * box.h
        return clamp(box.x, yy), clamp(box.x2, yy)

    head_x = min(max(bb.head[0], box.x), box.x2)
    neck, shoulder, waist = (pair(fractions[k]) for k in ("neck", "shoulder", "waist"))
    return BodyMarkers(
        head=clamp(head_x, box.y),
        neck_left=neck[0], neck_right=neck[1],
        shoulder_left=shoulder[0], shoulder_right=shoulder[1],
        waist_left=waist[0], waist_right=waist[1],
        foot_left=clamp(box.x, box.y2), foot_right=clamp(box.x2, box.y2),
    )


def _place(scenario: Scenario, frame_index: int) -> list[_Billboard]:
    width, height = scenario.image_size
    boards = []
    for person in scenario.persons:
        pos = person.position(frame_index)
        if pos is None:
            continue
        bb = _billboard(scenario.camera, person, pos)
        if bb is not None and bb.box.clip(width, height) is not None:
            boards.append(bb)
    return boards


def _annotation(bb: _Billboard, scenario: Scenario) -> PersonAnnotation:
    p = bb.person
    attrs = {
        "height": height_class_for(p.true_height_cm),
        "torso_type": p.torso_type,
        "torso_color": p.torso_color1,
        "torso_second_color": p.torso_color2,
        "gender": p.gender,
        "leg_type": p.leg_type,
        "leg_color": p.leg_color,
    }
    return PersonAnnotation(p.person_id, _markers(bb, scenario.marker_fractions, scenario.image_size),
                            attrs)


def annotate_frame(scenario: Scenario, frame_index: int) -> tuple[PersonAnnotation, ...]:
    """Annotations of every person in view, without rasterising the frame."""
    return tuple(_annotation(bb, scenario) for bb in _place(scenario, frame_index))


def render_frame(scenario: Scenario, frame_index: int) -> RenderedFrame:
    width, height = scenario.image_size
    image = np.empty((height, width, 3), dtype=np.uint8)
    image[:] = scenario.background_color
    owner = np.full((height, width), -1, dtype=np.int64)

    boards = _place(scenario, frame_index)

    # painter's algorithm: farthest first, stable on ties
    order = sorted(range(len(boards)), key=lambda k: -boards[k].depth)
    footprint: dict[int, tuple[int, int, int, int]] = {}
    for k in order:
        bb = boards[k]
        c0, c1, r0, r1 = box_pixel_span(bb.box)
        c0, c1 = max(c0, 0), min(c1, width)
        r0, r1 = max(r0, 0), min(r1, height)
        footprint[k] = (c0, c1, r0, r1)
        if c1 <= c0 or r1 <= r0:
            continue
        colors = _row_colors(bb, height)
        owner[r0:r1, c0:c1] = k
        image[r0:r1, c0:c1] = colors[r0:r1, None, :]

    if scenario.gamma is not None:
        image = gamma_adjust_image(image, scenario.gamma)

    detections: list[Detection] = []
    annotations: list[PersonAnnotation] = []
    occluded: set[str] = set()
    for k, bb in enumerate(boards):
        p = bb.person
        c0, c1, r0, r1 = footprint[k]
        bits = owner == k
        visible = int(bits.sum())
        full = max(c1 - c0, 0) * max(r1 - r0, 0)
        if visible < full:
            occluded.add(p.person_id)
        annotations.append(_annotation(bb, scenario))
        if visible == 0:
            continue
        clipped = bb.box.clip(width, height)
        if visible < full:
            rows, cols = np.nonzero(bits)
            tight = Box.from_corners(max(cols.min(), clipped.x), max(rows.min(), clipped.y),
                                     min(cols.max() + 1, clipped.x2), min(rows.max() + 1, clipped.y2))
            box = tight
        else:
            box = clipped
        detections.append(Detection(box, Mask(bits), p.person_id, 1.0))

    return RenderedFrame(image, detections, tuple(annotations), frozenset(occluded))


def annotate(scenario: Scenario, frames: Sequence[RenderedFrame]) -> SequenceAnnotation:
    return SequenceAnnotation(scenario.sequence_id, scenario.difficulty, scenario.image_size,
                              scenario.target_person_id, tuple(fr.persons for fr in frames))


def render_sequence(scenario: Scenario) -> list[RenderedFrame]:
    return [render_frame(scenario, f) for f in range(scenario.frame_count)]


def write_scene(scenario: Scenario, out_dir: str | os.PathLike) -> SequenceAnnotation:
    """Render every frame and write the on-disk layout the CLI consumes::

        out_dir/frames/000000.ppm ...
        out_dir/detections.jsonl
        out_dir/annotations.json
        out_dir/calibration.json
        out_dir/query.json
    """
    out_dir = os.fspath(out_dir)
    frames_dir = os.path.join(out_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    rendered = render_sequence(scenario)
    for f, fr in enumerate(rendered):
        write_ppm(os.path.join(frames_dir, frame_filename(f)), fr.image)
    write_detections_stream(os.path.join(out_dir, "detections.jsonl"),
                            ((f, fr.detections) for f, fr in enumerate(rendered)))
    seq = annotate(scenario, rendered)
    _dump(os.path.join(out_dir, "annotations.json"), serialize_sequence(seq))
    _dump(os.path.join(out_dir, "calibration.json"), scenario.camera.to_dict())
    _dump(os.path.join(out_dir, "query.json"), query_from_target(seq).to_dict())
    return seq


def frame_filename(frame_index: int) -> str:
    return f"{frame_index:06d}.ppm"


def _dump(path: str, doc: Any) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def scenario_to_document(scenario: Scenario) -> dict[str, Any]:
    return {
        "sequence_id": scenario.sequence_id,
        "difficulty": scenario.difficulty,
        "target_person_id": scenario.target_person_id,
        "frame_count": scenario.frame_count,
        "background_color": list(scenario.background_color),
        "seed": scenario.seed,
        "gamma": scenario.gamma,
        "marker_fractions": dict(scenario.marker_fractions),
        "camera": scenario.camera.to_dict(),
        "persons": [
            {
                "person_id": p.person_id,
                "true_height_cm": p.true_height_cm,
                "trajectory": [None if q is None else list(q) for q in p.trajectory],
                "torso_type": p.torso_type,
                "torso_color1": p.torso_color1,
                "torso_color2": p.torso_color2,
                "leg_type": p.leg_type,
                "leg_color": p.leg_color,
                "gender": p.gender,
                "width_to_height_ratio": p.width_to_height_ratio,
            }
            for p in scenario.persons
        ],
    }
