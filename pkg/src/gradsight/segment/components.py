"""Connected components and bounding boxes of binary masks."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import ndimage

_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


class BBox(NamedTuple):
    """Inclusive box ``(row_min, col_min, row_max, col_max)``."""

    row_min: int
    col_min: int
    row_max: int
    col_max: int

    @property
    def area(self) -> int:
        return (self.row_max - self.row_min + 1) * (self.col_max - self.col_min + 1)


def largest_component(mask: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """Keep the largest connected foreground component.

    Components are numbered in raster order of their first pixel, so a size
    tie goes to the one whose first pixel comes earliest.
    """
    if connectivity not in _STRUCTURE:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(mask, structure=_STRUCTURE[connectivity])
    if count == 0:
        return np.zeros_like(mask)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == 1 + int(np.argmax(sizes))


def bounding_box(mask: np.ndarray) -> BBox | None:
    """Tight box around the foreground, or None for an empty mask."""
    rows = np.flatnonzero(np.any(mask, axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(np.any(mask, axis=0))
    return BBox(int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1]))


def box_iou(a: BBox, b: BBox) -> float:
    r0, c0 = max(a.row_min, b.row_min), max(a.col_min, b.col_min)
    r1, c1 = min(a.row_max, b.row_max), min(a.col_max, b.col_max)
    inter = max(0, r1 - r0 + 1) * max(0, c1 - c0 + 1)
    return inter / (a.area + b.area - inter)
