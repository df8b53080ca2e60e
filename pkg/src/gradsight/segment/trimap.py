"""Saliency-quantile trimaps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNKNOWN = 0
FG_SEED = 1
BG_SEED = 2


def nearest_rank(values: np.ndarray, q: float) -> float:
    """Value at 0-based position ``ceil(q*N)`` of the ascending sample (clamped)."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("quantile of an empty sample")
    # guard ceil() against q*N landing a rounding error above an integer
    idx = math.ceil(q * v.size - 1e-9)
    return float(v[min(max(idx, 0), v.size - 1)])


@dataclass
class Trimap:
    labels: np.ndarray  # (rows, cols) of UNKNOWN / FG_SEED / BG_SEED
    fg_quantile: float
    bg_quantile: float
    fg_threshold: float
    bg_threshold: float

    @property
    def fg(self) -> np.ndarray:
        return self.labels == FG_SEED

    @property
    def bg(self) -> np.ndarray:
        return self.labels == BG_SEED

    @property
    def unknown(self) -> np.ndarray:
        return self.labels == UNKNOWN


def threshold_trimap(saliency, fg_q: float = 0.95, bg_q: float = 0.30) -> Trimap:
    """Foreground seeds at saliency >= the ``fg_q`` quantile, background below ``bg_q``.

    ``saliency`` is a :class:`~gradsight.saliency.SaliencyMap` or a 2-D array.
    """
    values = np.asarray(getattr(saliency, "values", saliency), dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot threshold an empty saliency map")
    if not (0 < bg_q < fg_q < 1):
        raise ValueError(f"need 0 < bg_q < fg_q < 1, got fg_q={fg_q} bg_q={bg_q}")
    hi = nearest_rank(values, fg_q)
    lo = nearest_rank(values, bg_q)
    labels = np.full(values.shape, UNKNOWN, dtype=np.int8)
    labels[values < lo] = BG_SEED
    labels[values >= hi] = FG_SEED
    return Trimap(labels, fg_q, bg_q, hi, lo)
