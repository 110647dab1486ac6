"""Dual-view image handling: left/right split and area (box-filter) resampling.

Images are float arrays ``[H, W, 3]`` with values in ``[0, 1]``.
"""
from __future__ import annotations

import numpy as np


class ImageError(ValueError):
    """Image has the wrong layout, range, or a degenerate size."""


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageError(f"expected an [H, W, 3] RGB image, got shape {img.shape}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ImageError("pixel values must lie in [0, 1]")
    return img


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row ``i`` averages the source interval ``[i*s, (i+1)*s)`` with ``s = n_in/n_out``,
    weighting partially covered pixels by their overlap."""
    scale = n_in / n_out
    edges = np.arange(n_out + 1) * scale
    lo, hi = edges[:-1, None], edges[1:, None]
    px = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, px + 1) - np.maximum(lo, px), 0.0, None)
    return overlap / scale


def area_resize(img: np.ndarray, height: int, width: int | None = None) -> np.ndarray:
    width = height if width is None else width
    rows = _area_matrix(img.shape[0], height)
    cols = _area_matrix(img.shape[1], width)
    return np.einsum("ih,hwc,jw->ijc", rows, img, cols)


def split_views(img: np.ndarray, view_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Cut the image into left/right halves and area-resample each to a square view.

    For odd widths the extra column goes to the left half.
    """
    img = check_image(img)
    w = img.shape[1]
    if w < 2 or img.shape[0] < 1:
        raise ImageError(f"image of width {w} cannot be split into two views")
    mid = (w + 1) // 2
    return (area_resize(img[:, :mid], view_size), area_resize(img[:, mid:], view_size))
