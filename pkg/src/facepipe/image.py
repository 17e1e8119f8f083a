"""Core image types and geometric primitives.

Images are plain numpy arrays of shape (height, width, 3), dtype uint8,
RGB interleaved. Continuous coordinates put the origin at the top-left
pixel corner with y growing downward; the center of pixel (row j, col i)
is at (i + 0.5, j + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DegenerateLandmarksError, InvalidBoxError

_EYE_EPS = 1e-9


def round_half_away(value: float) -> int:
    """Round to nearest integer, halves away from zero."""
    if value >= 0:
        return int(math.floor(value + 0.5))
    return int(math.ceil(value - 0.5))


def check_image(img: np.ndarray) -> np.ndarray:
    """Validate an (H, W, 3) uint8 RGB array and return it C-contiguous."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        raise TypeError(f"image must be uint8, got {arr.dtype}")
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"image must be at least 1x1, got {arr.shape}")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class Point:
    x: float
    y: float


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def validate(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise InvalidBoxError(f"box extents must be positive, got w={self.w}, h={self.h}")

    @property
    def center(self) -> Point:
        return Point(self.x + self.w / 2.0, self.y + self.h / 2.0)


@dataclass(frozen=True)
class FaceLandmarks:
    """Eye centers and nose tip; left_eye is the image-left eye."""

    left_eye: Point
    right_eye: Point
    nose: Point

    def validate(self) -> None:
        dx = abs(self.right_eye.x - self.left_eye.x)
        dy = abs(self.right_eye.y - self.left_eye.y)
        if dx <= _EYE_EPS and dy <= _EYE_EPS:
            raise DegenerateLandmarksError("eye centers coincide")


def crop_to_box(img: np.ndarray, box: BoundingBox) -> np.ndarray:
    """Crop to the rounded box; areas outside the source are black.

    Output pixel (row j, col i) equals input pixel (row round(y)+j,
    col round(x)+i) where that exists, else (0, 0, 0).
    """
    img = check_image(img)
    box.validate()
    out_w = round_half_away(box.w)
    out_h = round_half_away(box.h)
    if out_w < 1 or out_h < 1:
        raise InvalidBoxError(f"box rounds to {out_w}x{out_h}; extents must round to >= 1")
    x0 = round_half_away(box.x)
    y0 = round_half_away(box.y)

    out = np.zeros((out_h, out_w, 3), dtype=np.uint8)
    src_h, src_w = img.shape[:2]
    # Overlap of [y0, y0+out_h) x [x0, x0+out_w) with the source frame.
    sy0, sy1 = max(y0, 0), min(y0 + out_h, src_h)
    sx0, sx1 = max(x0, 0), min(x0 + out_w, src_w)
    if sy0 < sy1 and sx0 < sx1:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = img[sy0:sy1, sx0:sx1]
    return out


def roll_angle(lm: FaceLandmarks) -> float:
    """Angle (radians) of the left-to-right eye vector above horizontal."""
    lm.validate()
    return math.atan2(lm.right_eye.y - lm.left_eye.y, lm.right_eye.x - lm.left_eye.x)


def rotate_point(p: Point, center: Point, angle: float) -> Point:
    """Rotate a point about `center` by -angle.

    This is the forward map matching rotate_about's inverse sampling, so
    a feature at p in the source lands at rotate_point(p, center, angle)
    in the rotated image.
    """
    ca = math.cos(angle)
    sa = math.sin(angle)
    dx = p.x - center.x
    dy = p.y - center.y
    return Point(center.x + ca * dx + sa * dy, center.y - sa * dx + ca * dy)


def _bilinear_sample(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample continuous positions (corner-origin) bilinearly; outside is black."""
    src_h, src_w = img.shape[:2]
    u = sx - 0.5
    v = sy - 0.5
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = u - x0
    fy = v - y0

    acc = np.zeros(sx.shape + (3,), dtype=np.float64)
    for dx_i, dy_i, w in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi = x0 + dx_i
        yi = y0 + dy_i
        valid = (xi >= 0) & (xi < src_w) & (yi >= 0) & (yi < src_h)
        xi_c = np.clip(xi, 0, src_w - 1)
        yi_c = np.clip(yi, 0, src_h - 1)
        vals = img[yi_c, xi_c].astype(np.float64)
        acc += vals * (w * valid)[..., None]
    return np.clip(np.floor(acc + 0.5), 0, 255).astype(np.uint8)


def rotate_about(img: np.ndarray, center: Point, angle: float) -> np.ndarray:
    """Rotate image content about `center`; corners uncovered by the source are black.

    Output pixel p is sampled bilinearly from the source at p rotated
    about `center` by +angle. Dimensions are preserved.
    """
    img = check_image(img)
    if angle == 0.0:
        return img.copy()
    h, w = img.shape[:2]
    ys, xs = np.meshgrid(
        np.arange(h, dtype=np.float64) + 0.5,
        np.arange(w, dtype=np.float64) + 0.5,
        indexing="ij",
    )
    dx = xs - center.x
    dy = ys - center.y
    ca = math.cos(angle)
    sa = math.sin(angle)
    sx = center.x + ca * dx - sa * dy
    sy = center.y + sa * dx + ca * dy
    return _bilinear_sample(img, sx, sy)


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Resize with bilinear sampling over pixel centers."""
    img = check_image(img)
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    h, w = img.shape[:2]
    if (out_w, out_h) == (w, h):
        return img.copy()
    scale_x = out_w / w
    scale_y = out_h / h
    ys, xs = np.meshgrid(
        (np.arange(out_h, dtype=np.float64) + 0.5) / scale_y,
        (np.arange(out_w, dtype=np.float64) + 0.5) / scale_x,
        indexing="ij",
    )
    # Clamp to pixel-center range so edges extend rather than fade to black.
    sx = np.clip(xs, 0.5, w - 0.5)
    sy = np.clip(ys, 0.5, h - 0.5)
    return _bilinear_sample(img, sx, sy)


def read_png(path) -> np.ndarray:
    """Load an image file as an (H, W, 3) uint8 RGB array."""
    with Image.open(path) as im:
        return check_image(np.asarray(im.convert("RGB")))


def write_png(img: np.ndarray, path) -> None:
    """Write an (H, W, 3) uint8 RGB array as PNG."""
    Image.fromarray(check_image(img), mode="RGB").save(path, format="PNG")
