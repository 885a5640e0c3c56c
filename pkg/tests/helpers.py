"""Shared builders for tests: random cameras, markers, detections."""
from __future__ import annotations

import numpy as np

from softretrieval.calib import TsaiCamera, project
from softretrieval.detect import Detection, box_mask
from softretrieval.model import BodyMarkers, Box

FIXTURES = __import__("pathlib").Path(__file__).parent / "fixtures"


def random_camera(rng: np.random.Generator, kappa_range=(-2e-4, 0.0)) -> TsaiCamera:
    eye = [rng.uniform(-500, 500), rng.uniform(-1500, -600), rng.uniform(250, 800)]
    target = [rng.uniform(-200, 200), rng.uniform(-200, 200), rng.uniform(0, 120)]
    size = (640, 480)
    return TsaiCamera.looking_at(
        eye, target,
        focal_mm=rng.uniform(4, 16),
        kappa1_per_mm2=rng.uniform(*kappa_range),
        image_size_px=size,
        pixel_size_mm=(rng.uniform(0.005, 0.012), rng.uniform(0.005, 0.012)),
        sx=rng.uniform(0.95, 1.05),
        center_px=(size[0] / 2 + rng.uniform(-15, 15), size[1] / 2 + rng.uniform(-15, 15)),
    )


def in_view(cam: TsaiCamera, point) -> bool:
    try:
        u, v = project(cam, point)
    except ValueError:
        return False
    w, h = cam.image_size_px
    return 0 <= u < w and 0 <= v < h


def random_ground_point(rng: np.random.Generator, cam: TsaiCamera, height_cm: float = 0.0):
    """A ground point (x, y, 0) whose vertical segment up to ``height_cm`` is in view,
    or None if 500 draws find none."""
    for _ in range(500):
        p = np.array([rng.uniform(-400, 400), rng.uniform(-400, 400), 0.0])
        if in_view(cam, p) and in_view(cam, p + [0, 0, height_cm]):
            return p
    return None


def random_standing_person(rng: np.random.Generator, kappa_range=(-2e-4, 0.0),
                           height_cm: float = 0.0):
    """(camera, ground point) with the vertical segment of ``height_cm`` fully in view."""
    while True:
        cam = random_camera(rng, kappa_range)
        p = random_ground_point(rng, cam, height_cm)
        if p is not None:
            return cam, p


def markers_for_box(x, y, w, h) -> BodyMarkers:
    cx = x + w / 2
    return BodyMarkers(
        head=(cx, y),
        neck_left=(cx - w * 0.2, y + 0.1 * h), neck_right=(cx + w * 0.2, y + 0.1 * h),
        shoulder_left=(x, y + 0.18 * h), shoulder_right=(x + w, y + 0.18 * h),
        waist_left=(x + 0.1 * w, y + 0.5 * h), waist_right=(x + 0.9 * w, y + 0.5 * h),
        foot_left=(x + 0.2 * w, y + h), foot_right=(x + 0.8 * w, y + h),
    )


def full_box_detection(box: Box, frame=(640, 480), person_id=None) -> Detection:
    return Detection(box, box_mask(box, *frame), person_id)


def shifted_box(prev: Box, target_iou: float) -> Box:
    """Same-size box shifted right so that its IoU with ``prev`` is ``target_iou``."""
    dx = prev.w * (1 - target_iou) / (1 + target_iou)
    return Box(prev.x + dx, prev.y, prev.w, prev.h)


def standing_detection(cam: TsaiCamera, feet_xy, height_cm: float, person_id=None,
                       ratio: float = 0.3) -> Detection:
    """Full-box detection of an upright person projected through ``cam``."""
    fu, fv = project(cam, (feet_xy[0], feet_xy[1], 0.0))
    _, hv = project(cam, (feet_xy[0], feet_xy[1], height_cm))
    h = fv - hv
    box = Box(fu - ratio * h / 2, hv, ratio * h, h)
    return Detection(box, box_mask(box, *cam.image_size_px), person_id)


class TableColor:
    """Colour classifier answering from a {person_id: (color1, color2)} table."""

    def __init__(self, table):
        self.table = table
        self.calls = 0

    def torso_color(self, det, image, band, which, frame_index):
        from softretrieval.attr import ColorVerdict
        self.calls += 1
        c1, c2 = self.table[det.source_person_id]
        return ColorVerdict(c1 if which == "color1" else c2, 1.0)


class TableGender:
    def __init__(self, table):
        self.table = table
        self.calls = 0

    def gender(self, det, image, frame_index):
        from softretrieval.attr import GenderVerdict
        self.calls += 1
        label, conf = self.table[det.source_person_id]
        return GenderVerdict(label, conf)


def grid_iou_2d(a: Box, b: Box, step: float = 0.05) -> float:
    """IoU by counting cell centres of a regular grid covering both boxes."""
    x0, y0 = min(a.x, b.x), min(a.y, b.y)
    x1, y1 = max(a.x2, b.x2), max(a.y2, b.y2)
    xs = (np.arange(np.floor(x0 / step), np.ceil(x1 / step)) + 0.5) * step
    ys = (np.arange(np.floor(y0 / step), np.ceil(y1 / step)) + 0.5) * step
    gx, gy = np.meshgrid(xs, ys)
    in_a = (a.x <= gx) & (gx < a.x2) & (a.y <= gy) & (gy < a.y2)
    in_b = (b.x <= gx) & (gx < b.x2) & (b.y <= gy) & (gy < b.y2)
    union = np.count_nonzero(in_a | in_b)
    return np.count_nonzero(in_a & in_b) / union if union else 0.0


def grid_iou_batch(a: np.ndarray, b: np.ndarray, step: float = 1e-4,
                   extent: tuple[float, float] = (-1.0, 201.0)) -> np.ndarray:
    """Grid-count IoU for many (x, y, w, h) pairs at once.

    Each box edge is snapped to the grid by counting cell centres below
    it; a box then covers an index range per axis, and overlap is the
    count of shared cells.
    """
    centres = (np.arange(np.floor(extent[0] / step), np.ceil(extent[1] / step)) + 0.5) * step

    def cells(lo, hi):
        return np.searchsorted(centres, lo, "left"), np.searchsorted(centres, hi, "left")

    ax0, ax1 = cells(a[:, 0], a[:, 0] + a[:, 2])
    ay0, ay1 = cells(a[:, 1], a[:, 1] + a[:, 3])
    bx0, bx1 = cells(b[:, 0], b[:, 0] + b[:, 2])
    by0, by1 = cells(b[:, 1], b[:, 1] + b[:, 3])
    shared_x = np.clip(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0, None)
    shared_y = np.clip(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0, None)
    inter = shared_x * shared_y
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def random_box_pairs(rng: np.random.Generator, n: int, integer: bool = False):
    """(n, 4) arrays of boxes; half the partners are shifted copies so overlaps are common."""
    a = np.column_stack([rng.uniform(0, 100, n), rng.uniform(0, 100, n),
                         rng.uniform(2, 60, n), rng.uniform(2, 60, n)])
    b = np.column_stack([rng.uniform(0, 100, n), rng.uniform(0, 100, n),
                         rng.uniform(2, 60, n), rng.uniform(2, 60, n)])
    near = rng.random(n) < 0.5
    b[near, :2] = a[near, :2] + rng.uniform(-20, 20, (near.sum(), 2))
    b[:, :2] = np.clip(b[:, :2], 0, 130)
    if integer:
        a, b = np.maximum(np.round(a), [0, 0, 1, 1]), np.maximum(np.round(b), [0, 0, 1, 1])
    return a, b
