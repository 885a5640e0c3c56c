"""Binary portable pixmap (P6, 8-bit RGB) reading and writing via Pillow."""
from __future__ import annotations

import os

import numpy as np
from PIL import Image, UnidentifiedImageError


class PixmapError(ValueError):
    pass


def write_ppm(path: str | os.PathLike, image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise PixmapError(f"expected an (H, W, 3) uint8 array, got {image.shape} {image.dtype}")
    Image.fromarray(np.ascontiguousarray(image), "RGB").save(path, format="PPM")


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.format != "PPM" or im.mode != "RGB":
                raise PixmapError(f"{path}: not an 8-bit RGB pixmap ({im.format} {im.mode})")
            return np.asarray(im).copy()
    except UnidentifiedImageError as exc:
        raise PixmapError(f"{path}: not a pixmap") from exc
