"""Tsai camera model: projection, back-projection and metric height.

World units are centimetres and the ground is the plane ``Zw = 0``.
Sensor-plane quantities (focal length, distorted/undistorted image
coordinates, pixel pitch) are millimetres.

Projection chain::

    p = R @ P + T                          world -> camera
    Xu = f * x / z,  Yu = f * y / z        perspective (mm)
    Xu = Xd * (1 + k1 * r^2), r^2 = Xd^2 + Yd^2   radial distortion
    u = sx * Xd / dx + Cx,  v = Yd / dy + Cy      sensor -> pixels
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .model import HEIGHT_RANGES, UNKNOWN

DISTORTION_TOL_MM = 1e-12
DISTORTION_MAX_ITER = 50


class CalibrationError(ValueError):
    pass


class BehindCameraError(CalibrationError):
    pass


class NoIntersectionError(CalibrationError):
    pass


class DegenerateGeometryError(CalibrationError):
    pass


class DistortionDivergenceError(CalibrationError):
    pass


@dataclass(frozen=True, eq=False)
class TsaiCamera:
    rotation: np.ndarray
    translation_cm: np.ndarray
    focal_mm: float
    kappa1_per_mm2: float
    center_px: tuple[float, float]
    sx: float
    pixel_size_mm: tuple[float, float]
    image_size_px: tuple[int, int]

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        T = np.asarray(self.translation_cm, dtype=float).reshape(3)
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(T)):
            raise CalibrationError("rotation and translation must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise CalibrationError("rotation is not orthonormal (R^T R != I)")
        det = float(np.linalg.det(R))
        if abs(det - 1.0) > 1e-9:
            raise CalibrationError(f"rotation determinant {det!r} != +1")
        for name in ("focal_mm", "sx"):
            if not getattr(self, name) > 0:
                raise CalibrationError(f"{name} must be strictly positive")
        if not all(d > 0 for d in self.pixel_size_mm):
            raise CalibrationError("pixel_size_mm entries must be strictly positive")
        R.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation_cm", T)
        object.__setattr__(self, "center_px", tuple(float(c) for c in self.center_px))
        object.__setattr__(self, "pixel_size_mm", tuple(float(d) for d in self.pixel_size_mm))
        object.__setattr__(self, "image_size_px", tuple(int(s) for s in self.image_size_px))

    @property
    def center_world(self) -> np.ndarray:
        return -self.rotation.T @ self.translation_cm

    def to_dict(self) -> dict[str, Any]:
        return {
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation_cm": [float(v) for v in self.translation_cm],
            "focal_mm": float(self.focal_mm),
            "kappa1_per_mm2": float(self.kappa1_per_mm2),
            "center_px": list(self.center_px),
            "sx": float(self.sx),
            "pixel_size_mm": list(self.pixel_size_mm),
            "image_size_px": list(self.image_size_px),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "TsaiCamera":
        keys = ("rotation", "translation_cm", "focal_mm", "kappa1_per_mm2",
                "center_px", "sx", "pixel_size_mm", "image_size_px")
        missing = [k for k in keys if k not in doc]
        if missing:
            raise CalibrationError(f"calibration document missing {missing}")
        if len(doc["rotation"]) != 9:
            raise CalibrationError("rotation must hold 9 row-major values")
        return cls(
            rotation=np.array(doc["rotation"], dtype=float).reshape(3, 3),
            translation_cm=np.array(doc["translation_cm"], dtype=float),
            focal_mm=float(doc["focal_mm"]),
            kappa1_per_mm2=float(doc["kappa1_per_mm2"]),
            center_px=tuple(doc["center_px"]),
            sx=float(doc["sx"]),
            pixel_size_mm=tuple(doc["pixel_size_mm"]),
            image_size_px=tuple(doc["image_size_px"]),
        )

    @classmethod
    def looking_at(cls, eye_cm: Sequence[float], target_cm: Sequence[float], *,
                   focal_mm: float = 8.0, kappa1_per_mm2: float = 0.0,
                   image_size_px: tuple[int, int] = (640, 480),
                   pixel_size_mm: tuple[float, float] = (0.01, 0.01),
                   sx: float = 1.0, center_px: tuple[float, float] | None = None,
                   ) -> "TsaiCamera":
        """Camera at ``eye_cm`` aimed at ``target_cm`` with world +Z up in the image."""
        eye = np.asarray(eye_cm, dtype=float)
        forward = np.asarray(target_cm, dtype=float) - eye
        forward /= np.linalg.norm(forward)
        up = np.array([0.0, 0.0, 1.0])
        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-9:
            raise CalibrationError("viewing direction is vertical; roll is undefined")
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.vstack([right, down, forward])
        if center_px is None:
            center_px = (image_size_px[0] / 2.0, image_size_px[1] / 2.0)
        return cls(R, -R @ eye, focal_mm, kappa1_per_mm2, center_px, sx,
                   pixel_size_mm, image_size_px)


@dataclass(frozen=True, eq=False)
class WorldRay:
    origin_cm: np.ndarray
    direction: np.ndarray

    def at(self, t: float) -> np.ndarray:
        return self.origin_cm + t * self.direction


@dataclass(frozen=True)
class HeightEstimate:
    height_cm: float
    residual_cm: float


def _distort(cam: TsaiCamera, xu: float, yu: float) -> tuple[float, float]:
    """Solve Xu = Xd (1 + k1 r^2) for the distorted sensor point by fixed-point iteration."""
    k1 = cam.kappa1_per_mm2
    if k1 == 0.0:
        return xu, yu
    xd, yd = xu, yu
    for _ in range(DISTORTION_MAX_ITER):
        r2 = xd * xd + yd * yd
        factor = 1.0 + k1 * r2
        if not factor > 0 or not math.isfinite(factor):
            raise DistortionDivergenceError(
                f"radial distortion diverged: kappa1={k1!r}, r^2={r2!r}")
        nx, ny = xu / factor, yu / factor
        if abs(nx - xd) < DISTORTION_TOL_MM and abs(ny - yd) < DISTORTION_TOL_MM:
            return nx, ny
        xd, yd = nx, ny
    raise DistortionDivergenceError(
        f"radial distortion did not converge in {DISTORTION_MAX_ITER} iterations: "
        f"kappa1={k1!r}, r^2={xd * xd + yd * yd!r}")


def project(cam: TsaiCamera, world_cm: Sequence[float]) -> tuple[float, float]:
    """Map a world point (cm) to pixel coordinates."""
    x, y, z = (float(c) for c in cam.rotation @ np.asarray(world_cm, dtype=float) + cam.translation_cm)
    if not z > 0:
        raise BehindCameraError(f"point is behind the camera (z={z!r} cm)")
    xu = cam.focal_mm * x / z
    yu = cam.focal_mm * y / z
    xd, yd = _distort(cam, xu, yu)
    dx, dy = cam.pixel_size_mm
    cx, cy = cam.center_px
    return cam.sx * xd / dx + cx, yd / dy + cy


def back_project_ray(cam: TsaiCamera, pixel: Sequence[float]) -> WorldRay:
    u, v = (float(c) for c in pixel)
    if not (math.isfinite(u) and math.isfinite(v)):
        raise CalibrationError(f"pixel ({u}, {v}) is not finite")
    dx, dy = cam.pixel_size_mm
    cx, cy = cam.center_px
    xd = (u - cx) * dx / cam.sx
    yd = (v - cy) * dy
    factor = 1.0 + cam.kappa1_per_mm2 * (xd * xd + yd * yd)
    d_cam = np.array([xd * factor / cam.focal_mm, yd * factor / cam.focal_mm, 1.0])
    d_world = cam.rotation.T @ d_cam
    return WorldRay(cam.center_world, d_world / np.linalg.norm(d_world))


def back_project_to_plane(cam: TsaiCamera, pixel: Sequence[float],
                          plane_z_cm: float = 0.0) -> np.ndarray:
    """Intersect the pixel's viewing ray with the horizontal plane ``Zw = plane_z_cm``."""
    ray = back_project_ray(cam, pixel)
    dz = ray.direction[2]
    if abs(dz) <= 1e-12:
        raise NoIntersectionError(f"ray through pixel {tuple(pixel)} is parallel to Z={plane_z_cm}")
    t = (plane_z_cm - ray.origin_cm[2]) / dz
    if t <= 0:
        raise BehindCameraError(f"plane Z={plane_z_cm} is hit behind the camera (t={t!r})")
    point = ray.at(t)
    point[2] = plane_z_cm
    return point


def estimate_height(cam: TsaiCamera, head_px: Sequence[float],
                    feet_px: Sequence[float]) -> HeightEstimate:
    """Height of the vertical line through the grounded feet point where it
    passes closest to the head's viewing ray.

    Negative heights are returned as-is; they signal geometry faults.
    """
    feet = back_project_to_plane(cam, feet_px, 0.0)
    head = back_project_ray(cam, head_px)
    up = np.array([0.0, 0.0, 1.0])
    d = head.direction
    b = float(d @ up)
    denom = 1.0 - b * b
    if denom < 1e-12:
        raise DegenerateGeometryError("head ray is parallel to the vertical through the feet")
    w0 = head.origin_cm - feet
    dw = float(d @ w0)
    ew = float(up @ w0)
    lam = (b * ew - dw) / denom
    h = (ew - b * dw) / denom
    residual = float(np.linalg.norm(head.at(lam) - (feet + h * up)))
    return HeightEstimate(float(feet[2] + h), residual)


def height_class_match(height_cm: float, class_label: str, margin_cm: float = 0.0) -> bool:
    if class_label == UNKNOWN:
        return True
    lo, hi = HEIGHT_RANGES[class_label]
    return lo - margin_cm <= height_cm <= hi + margin_cm
