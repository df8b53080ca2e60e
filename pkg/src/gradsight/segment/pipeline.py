"""Weakly supervised localisation: saliency -> trimap -> GraphCut -> box."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from gradsight import saliency as sal
from gradsight.network import Network
from gradsight.segment.components import BBox, bounding_box, largest_component
from gradsight.segment.gmm import DEFAULT_RIDGE, fit_gmm
from gradsight.segment.graphcut import UNARY_CLAMP, build_graph, cut_capacity, max_flow
from gradsight.segment.trimap import Trimap, threshold_trimap


class InvariantError(RuntimeError):
    """An internal consistency check failed; indicates a bug, not bad input."""


@dataclass(frozen=True)
class SegmentConfig:
    fg_q: float = 0.95
    bg_q: float = 0.30
    gamma: float = 50.0
    connectivity: int = 8
    component_connectivity: int = 4
    gmm_components: int = 5
    gmm_iters: int = 10
    ridge: float = DEFAULT_RIDGE
    unary_clamp: float = UNARY_CLAMP
    crops: int = 10  # 10 for the crop/mirror protocol, 1 for a single pass
    seed: int = 42


@dataclass
class Detection:
    class_id: int
    box: BBox | None  # None means no detection
    mask: np.ndarray
    trimap: Trimap
    flow: float

    def line(self) -> str:
        """``class_id row_min col_min row_max col_max``; -1s when nothing was found."""
        coords = self.box if self.box is not None else (-1, -1, -1, -1)
        return " ".join(str(v) for v in (self.class_id, *coords))


def _model_pixels(pixels, primary, fallback):
    # an empty seed set (e.g. a flat saliency map) falls back to the other pixels
    for m in (primary, fallback):
        if m.any():
            return pixels[m]
    return pixels


def segment_with_saliency(image: np.ndarray, saliency_values: np.ndarray, cfg: SegmentConfig):
    """GraphCut a raw ``(c, h, w)`` image seeded by a saliency map.

    Returns ``(mask, trimap, flow)`` with ``mask`` the largest foreground
    component of the minimum cut.
    """
    c, h, w = image.shape
    trimap = threshold_trimap(saliency_values, cfg.fg_q, cfg.bg_q)
    z = image.reshape(c, -1).T.astype(np.float64)
    fg_seed, bg_seed = trimap.fg.ravel(), trimap.bg.ravel()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fg = fit_gmm(_model_pixels(z, fg_seed, ~bg_seed), cfg.gmm_components, cfg.gmm_iters, cfg.seed, cfg.ridge)
        bg = fit_gmm(_model_pixels(z, bg_seed, ~fg_seed), cfg.gmm_components, cfg.gmm_iters, cfg.seed, cfg.ridge)
    graph = build_graph(image, trimap, fg, bg, cfg.gamma, cfg.connectivity, cfg.unary_clamp)
    flow, source_side = max_flow(graph)
    cut = cut_capacity(graph, source_side)
    if abs(flow - cut) > 1e-6 * max(1.0, abs(cut)):
        raise InvariantError(f"max-flow {flow} differs from cut capacity {cut}")
    labels = source_side.reshape(h, w)
    if np.any(labels[trimap.bg]) or not np.all(labels[trimap.fg]):
        raise InvariantError("minimum cut violates a hard seed")
    return largest_component(labels, cfg.component_connectivity), trimap, flow


def localize(net: Network, image: np.ndarray, top_k: int = 5, cfg: SegmentConfig = SegmentConfig()):
    """Boxes for the ``top_k`` highest-scoring classes of a raw image.

    ``image`` holds colours in [0, 1]; it is zero-centred with the network's
    mean image for scoring and saliency, while the colour models see the raw
    pixels.
    """
    if not 1 <= top_k <= net.num_classes:
        raise ValueError(f"top_k must be in [1, {net.num_classes}], got {top_k}")
    if cfg.crops not in (1, 10):
        raise ValueError(f"crops must be 1 or 10, got {cfg.crops}")
    x = net.preprocess(image)
    _, h, w = x.shape
    crops = sal.CropSpec.ten_crop(h, w) if cfg.crops == 10 else sal.CropSpec.single(h, w)
    detections = []
    for class_id in sal.top_classes(net, x, top_k).tolist():
        smap = sal.multicrop_saliency(net, x, class_id, crops)
        mask, trimap, flow = segment_with_saliency(image, smap.values, cfg)
        detections.append(Detection(class_id, bounding_box(mask), mask, trimap, flow))
    return detections
