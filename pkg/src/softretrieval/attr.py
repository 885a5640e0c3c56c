"""Torso colour and gender classification.

Two families of classifiers sit behind the same small interface:

* :class:`ReferenceColorClassifier` names the colour of a torso patch by
  mapping every pixel through an ordered hue/saturation/value rule table
  and taking a majority vote.
* :class:`OracleColorClassifier` / :class:`OracleGenderClassifier` read
  the answer from annotations, optionally corrupted at a seeded rate.

A neural backend only has to provide ``torso_color`` / ``gender`` with the
same signatures.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources
from typing import Any, Protocol, Sequence

import numpy as np
from matplotlib.colors import rgb_to_hsv

from .detect import Detection, frame_rng
from .model import COLOR_LABELS, CULTURE_COLORS, UNKNOWN, SequenceAnnotation
from .patch import Band, Patch, extract_patch

DEFAULT_MIN_PIXELS = 25

# Swatches the default table is tuned against; the renderer paints with these.
CANONICAL_SWATCHES: dict[str, tuple[int, int, int]] = {
    "black": (25, 25, 25),
    "blue": (30, 60, 190),
    "brown": (110, 60, 25),
    "green": (40, 150, 50),
    "grey": (128, 128, 128),
    "orange": (245, 130, 20),
    "pink": (245, 150, 200),
    "purple": (110, 40, 150),
    "red": (200, 25, 25),
    "white": (235, 235, 235),
    "yellow": (235, 215, 30),
    "skin": (220, 170, 135),
}


class ColorTableError(ValueError):
    pass


class ProviderMismatchError(LookupError):
    """An oracle classifier got a detection it cannot trace to an annotation."""


@dataclass(frozen=True)
class ColorVerdict:
    label: str
    confidence: float


@dataclass(frozen=True)
class GenderVerdict:
    label: str
    confidence: float


@dataclass(frozen=True)
class ColorRule:
    label: str
    h_range_deg: tuple[float, float]
    s_range: tuple[float, float]
    v_range: tuple[float, float]

    def matches(self, h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
        return ((self.h_range_deg[0] <= h) & (h <= self.h_range_deg[1])
                & (self.s_range[0] <= s) & (s <= self.s_range[1])
                & (self.v_range[0] <= v) & (v <= self.v_range[1]))

    @property
    def is_catch_all(self) -> bool:
        return (self.h_range_deg[0] <= 0 and self.h_range_deg[1] >= 360
                and self.s_range[0] <= 0 and self.s_range[1] >= 1
                and self.v_range[0] <= 0 and self.v_range[1] >= 1)


class ColorPrototypeTable:
    """Ordered colour rules; the first rule matching a pixel names it."""

    def __init__(self, rules: Sequence[ColorRule]):
        if not rules:
            raise ColorTableError("colour table is empty")
        for rule in rules:
            if rule.label not in CULTURE_COLORS:
                raise ColorTableError(f"rule label {rule.label!r} is not a culture colour")
        if not rules[-1].is_catch_all:
            raise ColorTableError("the last rule must be a catch-all covering every h, s, v")
        self.rules = tuple(rules)

    @classmethod
    def from_document(cls, doc: Sequence[dict[str, Any]]) -> "ColorPrototypeTable":
        try:
            rules = [ColorRule(r["label"], tuple(r["h_range_deg"]), tuple(r["s_range"]),
                               tuple(r["v_range"])) for r in doc]
        except (KeyError, TypeError) as exc:
            raise ColorTableError(f"malformed colour rule: {exc}") from exc
        return cls(rules)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ColorPrototypeTable":
        with open(path, encoding="utf-8") as f:
            return cls.from_document(json.load(f))

    @classmethod
    def default(cls) -> "ColorPrototypeTable":
        text = resources.files("softretrieval").joinpath("data/color_table.json").read_text()
        return cls.from_document(json.loads(text))

    def label_pixels(self, rgb: np.ndarray) -> np.ndarray:
        """Index into ``self.rules`` for each row of an (N, 3) uint8 array."""
        hsv = rgb_to_hsv(np.asarray(rgb, dtype=float).reshape(-1, 3) / 255.0)
        h, s, v = hsv[:, 0] * 360.0, hsv[:, 1], hsv[:, 2]
        out = np.full(len(hsv), -1, dtype=np.int64)
        for i, rule in enumerate(self.rules):
            hit = (out < 0) & rule.matches(h, s, v)
            out[hit] = i
        return out


def classify_color(patch: Patch | np.ndarray, table: ColorPrototypeTable | None = None,
                   min_pixels: int = DEFAULT_MIN_PIXELS) -> ColorVerdict:
    pixels = patch.pixels if isinstance(patch, Patch) else np.asarray(patch, dtype=np.uint8)
    pixels = pixels.reshape(-1, 3)
    if len(pixels) < min_pixels or len(pixels) == 0:
        return ColorVerdict(UNKNOWN, 0.0)
    table = table or _default_table()
    rule_idx = table.label_pixels(pixels)
    labels = np.array([table.rules[i].label for i in rule_idx])
    # ties resolve by taxonomy order so the verdict is independent of pixel order
    votes = {c: int(np.count_nonzero(labels == c)) for c in COLOR_LABELS[1:]}
    winner = max(votes, key=lambda c: votes[c])
    return ColorVerdict(winner, votes[winner] / len(pixels))


_DEFAULT_TABLE: ColorPrototypeTable | None = None


def _default_table() -> ColorPrototypeTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = ColorPrototypeTable.default()
    return _DEFAULT_TABLE


class ColorClassifier(Protocol):
    def torso_color(self, det: Detection, image: np.ndarray | None, band: Band,
                    which: str, frame_index: int) -> ColorVerdict: ...


class GenderClassifier(Protocol):
    def gender(self, det: Detection, image: np.ndarray | None, frame_index: int) -> GenderVerdict: ...


class ReferenceColorClassifier:
    """Majority-vote colour of the masked torso band.

    One label per patch, so ``which`` is ignored: the cascade compares the
    same label against the first and then the second query colour.
    """

    def __init__(self, table: ColorPrototypeTable | None = None,
                 min_pixels: int = DEFAULT_MIN_PIXELS):
        self.table = table or _default_table()
        self.min_pixels = min_pixels

    def torso_color(self, det, image, band, which="color1", frame_index=0) -> ColorVerdict:
        if image is None:
            raise ValueError("the reference colour classifier needs frame images")
        return classify_color(extract_patch(image, det, band), self.table, self.min_pixels)


class _AnnotationLookup:
    def __init__(self, seq: SequenceAnnotation):
        self.seq = seq
        self._first: dict[str, Any] = {}
        for persons in seq.frames:
            for p in persons:
                self._first.setdefault(p.person_id, p)

    def attribute(self, det: Detection, frame_index: int, name: str) -> str:
        pid = det.source_person_id
        if pid is None:
            raise ProviderMismatchError(
                "oracle classifier needs detections that carry a source person id")
        person = self.seq.person_in_frame(frame_index, pid) or self._first.get(pid)
        if person is None:
            raise ProviderMismatchError(f"person {pid!r} is not in the annotations")
        return person.attribute(name)


class OracleGenderClassifier:
    """Annotated gender, flipped with probability ``error_rate``.

    Reported confidence is ``1 - error_rate`` whether or not the draw flipped.
    """

    def __init__(self, seq: SequenceAnnotation, error_rate: float = 0.0, seed: int = 0):
        if not 0.0 <= error_rate <= 1.0:
            raise ValueError("error_rate must lie in [0, 1]")
        self.lookup = _AnnotationLookup(seq)
        self.error_rate = error_rate
        self.seed = seed

    def gender(self, det, image=None, frame_index=0) -> GenderVerdict:
        label = self.lookup.attribute(det, frame_index, "gender")
        confidence = 1.0 - self.error_rate
        if label == UNKNOWN:
            return GenderVerdict(UNKNOWN, confidence)
        rng = frame_rng(self.seed, frame_index, "gender", det.source_person_id)
        if rng.random() < self.error_rate:
            label = "female" if label == "male" else "male"
        return GenderVerdict(label, confidence)


class OracleColorClassifier:
    """Annotated torso colour (first or second); a corrupted draw picks one of
    the other culture colours uniformly."""

    _ATTRS = {"color1": "torso_color", "color2": "torso_second_color"}

    def __init__(self, seq: SequenceAnnotation, error_rate: float = 0.0, seed: int = 0):
        if not 0.0 <= error_rate <= 1.0:
            raise ValueError("error_rate must lie in [0, 1]")
        self.lookup = _AnnotationLookup(seq)
        self.error_rate = error_rate
        self.seed = seed

    def torso_color(self, det, image=None, band=None, which="color1", frame_index=0) -> ColorVerdict:
        label = self.lookup.attribute(det, frame_index, self._ATTRS[which])
        confidence = 1.0 - self.error_rate
        if label == UNKNOWN:
            return ColorVerdict(UNKNOWN, 1.0)
        rng = frame_rng(self.seed, frame_index, which, det.source_person_id)
        if rng.random() < self.error_rate:
            others = [c for c in CULTURE_COLORS if c != label]
            label = others[int(rng.integers(len(others)))]
        return ColorVerdict(label, confidence)


def classify_gender(det: Detection, image: np.ndarray | None, classifier: GenderClassifier,
                    frame_index: int = 0) -> GenderVerdict:
    return classifier.gender(det, image, frame_index)


def oracle_color(det: Detection, which: str, classifier: OracleColorClassifier,
                 frame_index: int = 0) -> ColorVerdict:
    return classifier.torso_color(det, None, None, which, frame_index)
