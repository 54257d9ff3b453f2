"""Orthogonal slice export as 8-bit PGM images.

Views: ``horizontal`` fixes z, ``sagittal`` fixes x, ``coronal`` fixes y.
A pixel is ``floor(alpha * 255 * norm(h) + (1 - alpha) * 255 * norm(v) + 0.5)``
with both heatmap and volume min-max normalized over the whole 3D array.
"""

import os
import re

import numpy as np

from .exceptions import DataError, ShapeError
from .io import _atomic_write
from .tensor import minmax_normalize

VIEWS = {"horizontal": 2, "sagittal": 0, "coronal": 1}

__all__ = ["VIEWS", "slice_image", "blend", "export_slices", "write_pgm", "read_pgm"]


def blend(heatmap, volume=None, alpha=0.5):
    """Per-voxel 8-bit overlay of the normalized heatmap onto the normalized volume."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    h = minmax_normalize(np.asarray(heatmap, dtype=np.float64))
    if volume is None:
        mix = 255.0 * h
    else:
        v = np.asarray(volume, dtype=np.float64)
        if v.shape != h.shape:
            raise ShapeError(f"heatmap {h.shape} and volume {v.shape} differ in shape")
        mix = alpha * 255.0 * h + (1.0 - alpha) * 255.0 * minmax_normalize(v)
    return np.clip(np.floor(mix + 0.5), 0, 255).astype(np.uint8)


def slice_image(heatmap, volume=None, view="horizontal", index=None, alpha=0.5):
    """One 2D uint8 slice; ``index`` defaults to the center (``dim // 2``)."""
    if view not in VIEWS:
        raise ValueError(f"view must be one of {sorted(VIEWS)}, got {view!r}")
    h = np.asarray(heatmap)
    axis = VIEWS[view]
    n = h.shape[axis]
    index = n // 2 if index is None else int(index)
    if not 0 <= index < n:
        raise DataError(f"{view} slice index {index} out of range [0, {n})")
    return np.take(blend(h, volume, alpha), index, axis=axis)


def write_pgm(path, image):
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise ShapeError("PGM images are 2D")
    rows, cols = img.shape
    _atomic_write(path, f"P5\n{cols} {rows}\n255\n".encode("ascii") + img.tobytes())
    return os.fspath(path)


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", data)
    if m is None:
        raise DataError(f"{path}: not an 8-bit binary PGM")
    cols, rows = int(m.group(1)), int(m.group(2))
    pixels = data[m.end():]
    if len(pixels) != rows * cols:
        raise DataError(f"{path}: expected {rows * cols} pixel bytes, got {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(rows, cols).copy()


def export_slices(heatmap, volume, out_prefix, views=tuple(VIEWS), index=None, alpha=0.5):
    """Write ``{out_prefix}_{view}.pgm`` for each view; returns the paths.

    ``index`` may be an int applied to every view or a dict per view.
    """
    paths = {}
    for view in views:
        idx = index.get(view) if isinstance(index, dict) else index
        paths[view] = write_pgm(f"{out_prefix}_{view}.pgm", slice_image(heatmap, volume, view, idx, alpha))
    return paths
