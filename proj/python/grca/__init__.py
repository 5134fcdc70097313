"""Python bindings for the geometric reward credit assignment engine."""

import json

from ._grca import (
    Box2D,
    Box3D,
    CameraCalibration,
    GrcaError,
    SimConfig,
    background_advantage,
    dequantize,
    iou_2d,
    iou_3d,
    keypoint_containment_2d,
    keypoint_containment_3d,
    parse_structured_output,
    project_corners,
    quantize,
    reprojection_consistency,
    route_group,
    standardize_group,
    token_roles,
    tokenize,
)
from . import _grca


def simulate(config=None):
    """Warm-up plus post-training; returns the report as a dict."""
    return json.loads(_grca._simulate(config or SimConfig()))


def analyze_variance(config=None, mid_steps=50, rollouts=10000, scene=0):
    """Broadcast vs routed gradient moments per field, as a dict."""
    return json.loads(_grca._analyze_variance(config or SimConfig(), mid_steps, rollouts, scene))


def score(pred, gt, calib=None, ranges=None):
    """Score a predictions JSONL file against ground truth JSONL."""
    return json.loads(_grca._score(str(pred), str(gt), None if calib is None else str(calib),
                                   None if ranges is None else str(ranges)))


__all__ = [
    "Box2D",
    "Box3D",
    "CameraCalibration",
    "GrcaError",
    "SimConfig",
    "analyze_variance",
    "background_advantage",
    "dequantize",
    "iou_2d",
    "iou_3d",
    "keypoint_containment_2d",
    "keypoint_containment_3d",
    "parse_structured_output",
    "project_corners",
    "quantize",
    "reprojection_consistency",
    "route_group",
    "score",
    "simulate",
    "standardize_group",
    "token_roles",
    "tokenize",
]
