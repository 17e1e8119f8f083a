"""Per-channel color histogram equalization.

Each RGB channel is remapped independently through a monotone 256-entry
lookup table built from its cumulative distribution, stretching occupied
intensity levels across the full 0-255 range.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyHistogramError
from .image import check_image

CHANNELS = ("R", "G", "B")


def channel_histogram(img: np.ndarray, channel: str) -> np.ndarray:
    """256-bin intensity histogram of one channel ('R', 'G' or 'B')."""
    img = check_image(img)
    if channel not in CHANNELS:
        raise ValueError(f"channel must be one of {CHANNELS}, got {channel!r}")
    plane = img[:, :, CHANNELS.index(channel)]
    return np.bincount(plane.ravel(), minlength=256).astype(np.int64)


def build_lut(hist: np.ndarray) -> np.ndarray:
    """Build the monotone equalization lookup table for one channel.

    With cdf(v) the cumulative count up to v and cdf_min the cdf at the
    lowest occupied bin, occupied bins map to
    round(255 * (cdf(v) - cdf_min) / (N - cdf_min)), halves rounding up.
    Unoccupied bins inherit the next lower occupied bin's value (they are
    never applied). A single occupied bin yields the identity map.
    """
    hist = np.asarray(hist, dtype=np.int64)
    if hist.shape != (256,):
        raise ValueError(f"histogram must have 256 bins, got shape {hist.shape}")
    if np.any(hist < 0):
        raise ValueError("histogram counts must be non-negative")
    total = int(hist.sum())
    if total == 0:
        raise EmptyHistogramError("histogram has no samples")

    occupied = np.flatnonzero(hist)
    if occupied.size == 1:
        return np.arange(256, dtype=np.uint8)

    cdf = np.cumsum(hist)
    cdf_min = int(cdf[occupied[0]])
    denom = total - cdf_min
    lut = np.zeros(256, dtype=np.uint8)
    last = 0
    for v in range(256):
        if hist[v] > 0:
            last = int(np.floor(255.0 * (int(cdf[v]) - cdf_min) / denom + 0.5))
        lut[v] = last
    return lut


def equalize(img: np.ndarray) -> np.ndarray:
    """Equalize each RGB channel independently through its own LUT."""
    img = check_image(img)
    out = np.empty_like(img)
    for c, name in enumerate(CHANNELS):
        lut = build_lut(channel_histogram(img, name))
        out[:, :, c] = lut[img[:, :, c]]
    return out


def histogram_csv(img: np.ndarray) -> str:
    """All three channel histograms as CSV text (bin,countR,countG,countB)."""
    hists = [channel_histogram(img, name) for name in CHANNELS]
    lines = ["bin,countR,countG,countB"]
    for v in range(256):
        lines.append(f"{v},{hists[0][v]},{hists[1][v]},{hists[2][v]}")
    return "\n".join(lines) + "\n"


def write_histogram_csv(img: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(histogram_csv(img))
