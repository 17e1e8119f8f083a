"""Face normalization pipeline and half-face masking.

normalize_face applies, in order: squaring of the face box, center-
preserving zoom-out, cropping, per-channel histogram equalization,
rotation about the nose tip to level the eyes, and a final bilinear
resize to a square output. Equalization runs before rotation so the
black corners introduced by rotation cannot skew the color remapping.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .equalize import equalize
from .image import (
    BoundingBox,
    FaceLandmarks,
    Point,
    check_image,
    crop_to_box,
    resize_bilinear,
    roll_angle,
    rotate_about,
    rotate_point,
    round_half_away,
)

MASK_MODES = ("none", "top", "bottom")

# Step identifiers, in the order every normalized sample's provenance lists them.
PROVENANCE_STEPS = ("crop", "square", "zoom", "equalize", "rotate", "resize")


@dataclass(frozen=True)
class NormalizeConfig:
    zoom_factor: float = 1.10
    output_size: int = 64
    mask_mode: str = "none"

    def validate(self) -> None:
        if self.zoom_factor < 1.0:
            raise ValueError(f"zoom_factor must be >= 1.0, got {self.zoom_factor}")
        if self.output_size < 8:
            raise ValueError(f"output_size must be >= 8, got {self.output_size}")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")


@dataclass(frozen=True)
class NormalizedSample:
    image: np.ndarray
    landmarks: FaceLandmarks
    provenance: tuple[str, ...]


@dataclass(frozen=True)
class BatchFailure:
    """Per-sample failure record produced by normalize_batch."""

    index: int
    error: str


def square_box(box: BoundingBox) -> BoundingBox:
    """Extend the shorter box side symmetrically about its center."""
    box.validate()
    if box.w == box.h:
        return box
    side = max(box.w, box.h)
    if box.w < box.h:
        return BoundingBox(box.x - (side - box.w) / 2.0, box.y, side, side)
    return BoundingBox(box.x, box.y - (side - box.h) / 2.0, side, side)


def zoom_out_box(box: BoundingBox, factor: float) -> BoundingBox:
    """Scale box extents by `factor` about the box center."""
    box.validate()
    if factor < 1.0:
        raise ValueError(f"zoom factor must be >= 1, got {factor}")
    if factor == 1.0:
        return box
    new_w = box.w * factor
    new_h = box.h * factor
    return BoundingBox(
        box.x - (new_w - box.w) / 2.0,
        box.y - (new_h - box.h) / 2.0,
        new_w,
        new_h,
    )


def mask_half(img: np.ndarray, mode: str) -> np.ndarray:
    """Zero one half of the image split at the horizontal midpoint.

    mode='top' keeps rows [0, floor(h/2)); mode='bottom' keeps the rest,
    so odd heights give the bottom half the extra row.
    """
    img = check_image(img)
    if mode not in ("top", "bottom"):
        raise ValueError(f"mode must be 'top' or 'bottom', got {mode!r}")
    out = img.copy()
    mid = img.shape[0] // 2
    if mode == "top":
        out[mid:, :, :] = 0
    else:
        out[:mid, :, :] = 0
    return out


def _shift_landmarks(lm: FaceLandmarks, dx: float, dy: float) -> FaceLandmarks:
    return FaceLandmarks(
        Point(lm.left_eye.x + dx, lm.left_eye.y + dy),
        Point(lm.right_eye.x + dx, lm.right_eye.y + dy),
        Point(lm.nose.x + dx, lm.nose.y + dy),
    )


def _scale_landmarks(lm: FaceLandmarks, s: float) -> FaceLandmarks:
    return FaceLandmarks(
        Point(lm.left_eye.x * s, lm.left_eye.y * s),
        Point(lm.right_eye.x * s, lm.right_eye.y * s),
        Point(lm.nose.x * s, lm.nose.y * s),
    )


def _rotate_landmarks(lm: FaceLandmarks, center: Point, angle: float) -> FaceLandmarks:
    return FaceLandmarks(
        rotate_point(lm.left_eye, center, angle),
        rotate_point(lm.right_eye, center, angle),
        rotate_point(lm.nose, center, angle),
    )


def normalize_face(
    img: np.ndarray,
    box: BoundingBox,
    lm: FaceLandmarks,
    cfg: NormalizeConfig | None = None,
) -> NormalizedSample:
    """Run the full normalization pipeline on one face image.

    Landmarks are carried through every geometric step, so the returned
    landmarks are in output-image coordinates with the eyes level.
    """
    cfg = cfg or NormalizeConfig()
    cfg.validate()
    img = check_image(img)
    lm.validate()

    boxed = zoom_out_box(square_box(box), cfg.zoom_factor)
    cropped = crop_to_box(img, boxed)
    lm_c = _shift_landmarks(lm, -round_half_away(boxed.x), -round_half_away(boxed.y))

    equalized = equalize(cropped)

    angle = roll_angle(lm_c)
    rotated = rotate_about(equalized, lm_c.nose, angle)
    lm_r = _rotate_landmarks(lm_c, lm_c.nose, angle)

    side = cropped.shape[0]
    scale = cfg.output_size / side
    resized = resize_bilinear(rotated, cfg.output_size, cfg.output_size)
    lm_out = _scale_landmarks(lm_r, scale)

    provenance = PROVENANCE_STEPS
    if cfg.mask_mode != "none":
        resized = mask_half(resized, cfg.mask_mode)
        provenance = provenance + ("mask",)
    return NormalizedSample(image=resized, landmarks=lm_out, provenance=provenance)


def normalize_batch(
    samples,
    cfg: NormalizeConfig | None = None,
    workers: int = 1,
) -> list[NormalizedSample | BatchFailure]:
    """Normalize a list of (image, box, landmarks) tuples.

    Failures are isolated: a failing sample yields a BatchFailure in its
    slot while the rest proceed. Output order always matches input order
    regardless of `workers`.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("sample list is empty")
    cfg = cfg or NormalizeConfig()

    def one(indexed):
        i, (img, box, lm) = indexed
        try:
            return normalize_face(img, box, lm, cfg)
        except Exception as exc:  # noqa: BLE001 - error isolation is the contract
            return BatchFailure(index=i, error=f"{type(exc).__name__}: {exc}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, enumerate(samples)))
    return [one(item) for item in enumerate(samples)]


def default_workers() -> int:
    """Normalization parallelism; the FACEPIPE_THREADS env var caps it."""
    default = min(4, os.cpu_count() or 1)
    env = os.environ.get("FACEPIPE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            return default
    return default
