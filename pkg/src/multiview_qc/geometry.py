"""Normalized center-format boxes, IoU and class-wise NMS."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels

# Slack for extents computed back from clamped corners.
_EDGE_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for boxes that cannot be represented (non-finite, zero area)."""


@dataclass(frozen=True, slots=True)
class BBox:
    """Axis-aligned box in normalized YOLO coordinates (center, size)."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError(f"non-finite box {vals}")
        if self.w <= 0.0 or self.h <= 0.0:
            raise GeometryError(f"degenerate box with w={self.w}, h={self.h}")
        x1, y1, x2, y2 = self.corners()
        if x1 < -_EDGE_TOL or y1 < -_EDGE_TOL or x2 > 1 + _EDGE_TOL or y2 > 1 + _EDGE_TOL:
            raise GeometryError(f"box {vals} extends outside the unit frame; use BBox.clamped")

    def corners(self) -> tuple[float, float, float, float]:
        hw = self.w / 2.0
        hh = self.h / 2.0
        return (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> BBox:
        return cls((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)

    @classmethod
    def clamped(cls, cx: float, cy: float, w: float, h: float) -> tuple[BBox, bool]:
        """Build a box, clipping any overrun of the unit frame.

        Returns the box and whether clipping happened. Zero or negative sizes,
        and boxes left with no area inside the frame, raise GeometryError.
        """
        vals = (cx, cy, w, h)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError(f"non-finite box {vals}")
        if w <= 0.0 or h <= 0.0:
            raise GeometryError(f"degenerate box with w={w}, h={h}")
        x1, y1 = cx - w / 2.0, cy - h / 2.0
        x2, y2 = cx + w / 2.0, cy + h / 2.0
        if x1 >= 0.0 and y1 >= 0.0 and x2 <= 1.0 and y2 <= 1.0:
            return cls(cx, cy, w, h), False
        x1, y1 = max(x1, 0.0), max(y1, 0.0)
        x2, y2 = min(x2, 1.0), min(y2, 1.0)
        if x2 <= x1 or y2 <= y1:
            raise GeometryError(f"box {vals} lies entirely outside the frame")
        return cls.from_corners(x1, y1, x2, y2), True


def area(b: BBox) -> float:
    return b.w * b.h


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union. Edge-touching boxes score exactly 0."""
    return kernels.iou_corners(*a.corners(), *b.corners())


def corners_array(boxes: Sequence[BBox]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.corners() for b in boxes], dtype=np.float64)


def iou_matrix(a: Sequence[BBox], b: Sequence[BBox]) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``."""
    return kernels.iou_matrix(corners_array(a), corners_array(b))


def nms(
    detections: Sequence[tuple[BBox, float, int]],
    iou_threshold: float,
) -> list[tuple[BBox, float, int]]:
    """Greedy class-wise non-maximum suppression over ``(box, confidence, class)``."""
    return [detections[i] for i in nms_indices(detections, iou_threshold)]


def nms_indices(detections: Sequence[tuple[BBox, float, int]], iou_threshold: float) -> list[int]:
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    if not detections:
        return []
    boxes = corners_array([d[0] for d in detections])
    scores = np.array([d[1] for d in detections], dtype=np.float64)
    classes = np.array([d[2] for d in detections], dtype=np.int64)
    return kernels.nms_keep(boxes, scores, classes, iou_threshold).tolist()
