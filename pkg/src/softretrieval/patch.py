"""Clothing-type dependent torso/leg patch extraction and gamma augmentation."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .detect import Detection
from .model import UNKNOWN, Box

# fractions of box height measured from the top edge
TORSO_BANDS: dict[str, tuple[float, float]] = {
    "long sleeve": (0.20, 0.48),
    "short sleeve": (0.20, 0.48),
    "no sleeve": (0.25, 0.48),
    "indian kurta/dress": (0.20, 0.56),
    UNKNOWN: (0.20, 0.50),
}
LEG_BANDS: dict[str, tuple[float, float]] = {
    "long pants": (0.56, 0.84),
    "dress": (0.56, 0.84),
    "skirt": (0.52, 0.64),
    "long shorts": (0.56, 0.68),
    "short shorts": (0.52, 0.62),
    "indian kurta/dress": (0.75, 0.90),
}
AUGMENT_GAMMAS = (0.7, 1.2, 1.5)

# absorbs float noise such as 0.29 * 100 = 28.999999999999996
_ROW_EPS = 1e-9


@dataclass(frozen=True)
class Band:
    r1: float
    r2: float

    def __post_init__(self):
        if not 0.0 <= self.r1 < self.r2 <= 1.0:
            raise ValueError(f"invalid band ({self.r1}, {self.r2})")

    def rows(self, box: Box) -> tuple[int, int]:
        """Half-open image row range ``[floor(y + r1 h), floor(y + r2 h))``."""
        return (math.floor(box.y + self.r1 * box.h + _ROW_EPS),
                math.floor(box.y + self.r2 * box.h + _ROW_EPS))


def torso_band(torso_type: str) -> Band:
    return Band(*TORSO_BANDS[torso_type])


def leg_band(leg_type: str) -> Band:
    """Leg band for ``leg_type``; legs with unknown type use the long-pants band."""
    return Band(*LEG_BANDS.get(leg_type, LEG_BANDS["long pants"]))


@dataclass(frozen=True, eq=False)
class Patch:
    pixels: np.ndarray       # (N, 3) uint8
    coords: np.ndarray       # (N, 2) int (row, col) image positions
    source_box: Box
    band: Band

    def __len__(self) -> int:
        return len(self.pixels)

    def to_image(self, background: int = 0) -> np.ndarray:
        """Rectangular band crop with off-mask pixels set to ``background``."""
        r0, r1 = self.band.rows(self.source_box)
        c0 = math.ceil(self.source_box.x)
        c1 = math.ceil(self.source_box.x2)
        out = np.full((max(r1 - r0, 0), max(c1 - c0, 0), 3), background, dtype=np.uint8)
        if len(self):
            out[self.coords[:, 0] - r0, self.coords[:, 1] - c0] = self.pixels
        return out


def extract_patch(image: np.ndarray, det: Detection, band: Band) -> Patch:
    height, width = image.shape[:2]
    box = det.box.clip(width, height)
    empty = Patch(np.zeros((0, 3), np.uint8), np.zeros((0, 2), np.int64), box or det.box, band)
    if box is None:
        return empty
    r0, r1 = band.rows(box)
    r0, r1 = max(r0, 0), min(r1, height, det.mask.height)
    c0 = max(math.ceil(box.x), 0)
    c1 = min(math.ceil(box.x2), width, det.mask.width)
    if r1 <= r0 or c1 <= c0:
        return empty
    region = det.mask.bits[r0:r1, c0:c1]
    rows, cols = np.nonzero(region)
    rows += r0
    cols += c0
    coords = np.stack([rows, cols], axis=1)
    return Patch(image[rows, cols].copy(), coords, box, band)


def gamma_lut(gamma: float) -> np.ndarray:
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    v = np.arange(256, dtype=float) / 255.0
    return np.floor(255.0 * v ** gamma + 0.5).astype(np.uint8)


def gamma_adjust_image(image: np.ndarray, gamma: float) -> np.ndarray:
    """Per-channel ``round(255 * (v / 255) ** gamma)``; gamma < 1 brightens."""
    return gamma_lut(gamma)[image]


def gamma_adjust(patch: Patch, gamma: float) -> Patch:
    return replace(patch, pixels=gamma_adjust_image(patch.pixels, gamma))
