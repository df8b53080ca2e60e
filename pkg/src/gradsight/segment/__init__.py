"""Saliency-seeded GraphCut segmentation and localisation."""

from gradsight.segment.components import BBox, bounding_box, box_iou, largest_component
from gradsight.segment.gmm import GmmModel, fit_gmm
from gradsight.segment.graphcut import FlowGraph, build_graph, cut_capacity, max_flow
from gradsight.segment.pipeline import (
    Detection,
    InvariantError,
    SegmentConfig,
    localize,
    segment_with_saliency,
)
from gradsight.segment.trimap import BG_SEED, FG_SEED, UNKNOWN, Trimap, nearest_rank, threshold_trimap

__all__ = [
    "BBox",
    "BG_SEED",
    "Detection",
    "FG_SEED",
    "FlowGraph",
    "GmmModel",
    "InvariantError",
    "SegmentConfig",
    "Trimap",
    "UNKNOWN",
    "bounding_box",
    "box_iou",
    "build_graph",
    "cut_capacity",
    "fit_gmm",
    "largest_component",
    "localize",
    "max_flow",
    "nearest_rank",
    "segment_with_saliency",
    "threshold_trimap",
]
