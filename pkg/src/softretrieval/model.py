"""Domain types, annotation/query ingestion and ground-truth boxes.

Coordinates are image pixels with the origin at the top-left corner and
y growing downward. Boxes are half-open real rectangles
``[x, x + w) x [y, y + h)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

UNKNOWN = "unknown"
NA_ALIASES = frozenset({"na", "n/a"})

COLOR_LABELS = (
    UNKNOWN, "black", "blue", "brown", "green", "grey", "orange",
    "pink", "purple", "red", "white", "yellow", "skin",
)
CULTURE_COLORS = COLOR_LABELS[1:]
TORSO_TYPES = (UNKNOWN, "long sleeve", "short sleeve", "no sleeve", "indian kurta/dress")
LEG_TYPES = (
    UNKNOWN, "long pants", "dress", "skirt", "long shorts", "short shorts",
    "indian kurta/dress",
)
GENDERS = (UNKNOWN, "male", "female")
DIFFICULTIES = ("very easy", "easy", "medium", "hard")

# label -> (lo_cm, hi_cm)
HEIGHT_RANGES: dict[str, tuple[float, float]] = {
    "very short": (130.0, 160.0),
    "short": (150.0, 170.0),
    "average": (160.0, 180.0),
    "tall": (170.0, 190.0),
    "very tall": (180.0, 210.0),
}
HEIGHT_CLASSES = (UNKNOWN, *HEIGHT_RANGES)

MARKER_NAMES = (
    "head", "neck_left", "neck_right", "shoulder_left", "shoulder_right",
    "waist_left", "waist_right", "foot_left", "foot_right",
)

ATTRIBUTE_LABELS: dict[str, tuple[str, ...]] = {
    "height": HEIGHT_CLASSES,
    "torso_type": TORSO_TYPES,
    "torso_color": COLOR_LABELS,
    "torso_second_color": COLOR_LABELS,
    "gender": GENDERS,
    "leg_type": LEG_TYPES,
    "leg_color": COLOR_LABELS,
    "leg_second_color": COLOR_LABELS,
}


class AnnotationError(ValueError):
    """Raised when an annotation or query document is malformed.

    ``path`` points at the offending field, e.g. ``frames[2].persons[0].markers``.
    """

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class TaxonomyError(AnnotationError):
    """A label is not a member of its closed attribute set."""

    def __init__(self, label: str, attribute: str, path: str = ""):
        self.label = label
        self.attribute = attribute
        super().__init__(f"label {label!r} is not a valid {attribute}", path)


class DegenerateBoxError(ValueError):
    pass


def normalize_label(value: Any, attribute: str, path: str = "") -> str:
    """Lower-case ``value`` and check it against the taxonomy for ``attribute``.

    ``None`` and "NA" both map to ``"unknown"``.
    """
    if value is None:
        return UNKNOWN
    if not isinstance(value, str):
        raise AnnotationError(f"expected a string label, got {value!r}", path)
    label = " ".join(value.strip().lower().replace("_", " ").split())
    if label in NA_ALIASES or label == "":
        return UNKNOWN
    if attribute == "height":
        # "short (150-170 cm)" style labels carry the range as decoration
        label = label.split("(")[0].strip()
    if label == "gray":
        label = "grey"
    if label not in ATTRIBUTE_LABELS[attribute]:
        raise TaxonomyError(value, attribute, path)
    return label


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.w > 0 and self.h > 0):
            raise DegenerateBoxError(f"box needs positive extent, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "Box":
        return cls(x1, y1, x2 - x1, y2 - y1)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    def clip(self, width: float, height: float) -> "Box | None":
        """Intersect with the frame ``[0, width) x [0, height)``; None if empty."""
        x1, y1 = max(self.x, 0.0), max(self.y, 0.0)
        x2, y2 = min(self.x2, width), min(self.y2, height)
        if x2 <= x1 or y2 <= y1:
            return None
        return Box.from_corners(x1, y1, x2, y2)


Point = tuple[float, float]


@dataclass(frozen=True)
class BodyMarkers:
    head: Point
    neck_left: Point
    neck_right: Point
    shoulder_left: Point
    shoulder_right: Point
    waist_left: Point
    waist_right: Point
    foot_left: Point
    foot_right: Point

    def as_dict(self) -> dict[str, Point]:
        return {name: getattr(self, name) for name in MARKER_NAMES}

    def validate(self, image_size: tuple[int, int] | None = None, path: str = "markers") -> None:
        for name, (x, y) in self.as_dict().items():
            if not (math.isfinite(x) and math.isfinite(y)):
                raise AnnotationError(f"marker {name} is not finite", path)
            if image_size is not None:
                w, h = image_size
                if not (0 <= x <= w and 0 <= y <= h):
                    raise AnnotationError(
                        f"marker {name}=({x}, {y}) outside frame {w}x{h}", path)
        if self.head[1] > min(self.foot_left[1], self.foot_right[1]):
            raise AnnotationError("head marker lies below a foot marker", path)


@dataclass(frozen=True)
class PersonAnnotation:
    person_id: str
    markers: BodyMarkers
    attributes: Mapping[str, str] = field(default_factory=dict)

    def attribute(self, name: str) -> str:
        return self.attributes.get(name, UNKNOWN)


@dataclass(frozen=True)
class SequenceAnnotation:
    sequence_id: str
    difficulty: str
    image_size: tuple[int, int]
    target_person_id: str
    frames: tuple[tuple[PersonAnnotation, ...], ...]

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def person_in_frame(self, frame_index: int, person_id: str) -> PersonAnnotation | None:
        if not 0 <= frame_index < len(self.frames):
            return None
        for person in self.frames[frame_index]:
            if person.person_id == person_id:
                return person
        return None

    def target_box(self, frame_index: int) -> Box | None:
        person = self.person_in_frame(frame_index, self.target_person_id)
        return None if person is None else ground_truth_box(person.markers)


@dataclass(frozen=True)
class SemanticQuery:
    height_class: str = UNKNOWN
    torso_type: str = UNKNOWN
    torso_color1: str = UNKNOWN
    torso_color2: str = UNKNOWN
    gender: str = UNKNOWN

    def to_dict(self) -> dict[str, str]:
        return {
            "height_class": self.height_class,
            "torso_type": self.torso_type,
            "torso_color1": self.torso_color1,
            "torso_color2": self.torso_color2,
            "gender": self.gender,
        }


_QUERY_FIELDS = {
    "height_class": "height",
    "torso_type": "torso_type",
    "torso_color1": "torso_color",
    "torso_color2": "torso_second_color",
    "gender": "gender",
}


def ground_truth_box(markers: BodyMarkers) -> Box:
    """Box spanning head-to-lowest-foot vertically and the widest body markers
    horizontally. The head's x never contributes to the width."""
    named = markers.as_dict()
    others = {k: v for k, v in named.items() if k != "head"}
    top = markers.head[1]
    bottom = max(markers.foot_left[1], markers.foot_right[1])
    left_name = min(others, key=lambda k: others[k][0])
    right_name = max(others, key=lambda k: others[k][0])
    left, right = others[left_name][0], others[right_name][0]
    if right - left <= 0:
        raise DegenerateBoxError(
            f"zero width: extreme markers {left_name} and {right_name} share x={left}")
    if bottom - top <= 0:
        lower = "foot_left" if markers.foot_left[1] >= markers.foot_right[1] else "foot_right"
        raise DegenerateBoxError(f"zero height: head and {lower} share y={top}")
    return Box(left, top, right - left, bottom - top)


def _point(value: Any, path: str) -> Point:
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        raise AnnotationError("expected an [x, y] pair of numbers", path)
    return float(value[0]), float(value[1])


def _require(doc: Mapping[str, Any], key: str, path: str) -> Any:
    if not isinstance(doc, Mapping):
        raise AnnotationError("expected an object", path)
    if key not in doc:
        raise AnnotationError(f"missing field {key!r}", path)
    return doc[key]


def parse_markers(doc: Any, path: str = "markers") -> BodyMarkers:
    if not isinstance(doc, Mapping):
        raise AnnotationError("expected an object", path)
    missing = [n for n in MARKER_NAMES if n not in doc]
    if missing:
        raise AnnotationError(f"missing markers {missing}", path)
    return BodyMarkers(**{n: _point(doc[n], f"{path}.{n}") for n in MARKER_NAMES})


def parse_attributes(doc: Any, path: str = "attributes") -> dict[str, str]:
    if doc is None:
        return {}
    if not isinstance(doc, Mapping):
        raise AnnotationError("expected an object", path)
    attrs: dict[str, str] = {}
    for name, value in doc.items():
        if name in ATTRIBUTE_LABELS:
            attrs[name] = normalize_label(value, name, f"{path}.{name}")
        else:
            # unconsumed attributes (age, build, luggage...) are kept verbatim
            attrs[name] = value
    return attrs


def parse_person(doc: Any, image_size: tuple[int, int] | None, path: str) -> PersonAnnotation:
    person_id = str(_require(doc, "person_id", path))
    markers = parse_markers(_require(doc, "markers", path), f"{path}.markers")
    markers.validate(image_size, f"{path}.markers")
    attributes = parse_attributes(doc.get("attributes"), f"{path}.attributes")
    return PersonAnnotation(person_id, markers, attributes)


def parse_sequence(doc: Any) -> SequenceAnnotation:
    """Validate an annotation document and build a :class:`SequenceAnnotation`."""
    sequence_id = str(_require(doc, "sequence_id", ""))
    difficulty = _require(doc, "difficulty", "")
    if not isinstance(difficulty, str) or difficulty.lower() not in DIFFICULTIES:
        raise AnnotationError(f"difficulty must be one of {DIFFICULTIES}", "difficulty")
    size = _require(doc, "image_size", "")
    if (not isinstance(size, (list, tuple)) or len(size) != 2
            or not all(isinstance(v, int) and v > 0 for v in size)):
        raise AnnotationError("expected [width, height] positive integers", "image_size")
    image_size = (int(size[0]), int(size[1]))
    target = str(_require(doc, "target_person_id", ""))
    raw_frames = _require(doc, "frames", "")
    if not isinstance(raw_frames, list) or not raw_frames:
        raise AnnotationError("expected a non-empty list", "frames")

    frames: list[tuple[PersonAnnotation, ...]] = []
    for i, frame in enumerate(raw_frames):
        fpath = f"frames[{i}]"
        index = _require(frame, "index", fpath)
        if index != i:
            raise AnnotationError(f"frame index {index!r} out of order, expected {i}", f"{fpath}.index")
        persons = _require(frame, "persons", fpath)
        if not isinstance(persons, list):
            raise AnnotationError("expected a list", f"{fpath}.persons")
        parsed = tuple(parse_person(p, image_size, f"{fpath}.persons[{j}]")
                       for j, p in enumerate(persons))
        ids = [p.person_id for p in parsed]
        if len(set(ids)) != len(ids):
            raise AnnotationError("duplicate person_id in frame", f"{fpath}.persons")
        frames.append(parsed)

    seq = SequenceAnnotation(sequence_id, difficulty.lower(), image_size, target, tuple(frames))
    if not any(seq.person_in_frame(i, target) for i in range(seq.frame_count)):
        raise AnnotationError(f"target person {target!r} never appears", "target_person_id")
    return seq


def serialize_sequence(seq: SequenceAnnotation) -> dict[str, Any]:
    return {
        "sequence_id": seq.sequence_id,
        "difficulty": seq.difficulty,
        "image_size": list(seq.image_size),
        "target_person_id": seq.target_person_id,
        "frames": [
            {
                "index": i,
                "persons": [
                    {
                        "person_id": p.person_id,
                        "markers": {k: list(v) for k, v in p.markers.as_dict().items()},
                        "attributes": dict(p.attributes),
                    }
                    for p in persons
                ],
            }
            for i, persons in enumerate(seq.frames)
        ],
    }


def parse_query(doc: Any) -> SemanticQuery:
    if not isinstance(doc, Mapping):
        raise AnnotationError("expected an object", "")
    unknown_keys = set(doc) - set(_QUERY_FIELDS)
    if unknown_keys:
        raise AnnotationError(f"unexpected query fields {sorted(unknown_keys)}", "")
    return SemanticQuery(**{
        key: normalize_label(doc.get(key), attr, key) for key, attr in _QUERY_FIELDS.items()
    })


def query_from_target(seq: SequenceAnnotation) -> SemanticQuery:
    """Build the search description from the target's annotated attributes.

    Each field takes the first non-unknown value over the frames in which
    the target is annotated.
    """
    annotations = [p for i in range(seq.frame_count)
                   if (p := seq.person_in_frame(i, seq.target_person_id)) is not None]
    if not annotations:
        raise AnnotationError(f"target {seq.target_person_id!r} is never annotated")
    values = {}
    for key, attr in _QUERY_FIELDS.items():
        values[key] = next((a.attribute(attr) for a in annotations if a.attribute(attr) != UNKNOWN),
                           UNKNOWN)
    return SemanticQuery(**values)
