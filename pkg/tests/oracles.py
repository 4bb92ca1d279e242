"""Independent reference computations the package is checked against.

Nothing here imports the code paths under test beyond plain data types.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
from shapely.geometry import box as shapely_box


def raster_iou(a, b, n=10_000, chunk=500):
    """IoU by counting pixel centers of an ``n x n`` grid over the unit square.

    ``a`` and ``b`` are ``(cx, cy, w, h)`` tuples.
    """
    def extent(bx):
        cx, cy, w, h = bx
        return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2

    ax1, ay1, ax2, ay2 = extent(a)
    bx1, by1, bx2, by2 = extent(b)
    xs = (np.arange(n) + 0.5) / n
    in_ax = (xs > ax1) & (xs < ax2)
    in_bx = (xs > bx1) & (xs < bx2)
    inter = union = 0
    for start in range(0, n, chunk):
        ys = (np.arange(start, min(start + chunk, n)) + 0.5) / n
        in_ay = ((ys > ay1) & (ys < ay2))[:, None]
        in_by = ((ys > by1) & (ys < by2))[:, None]
        ma = in_ay & in_ax[None, :]
        mb = in_by & in_bx[None, :]
        inter += int(np.count_nonzero(ma & mb))
        union += int(np.count_nonzero(ma | mb))
    return inter / union if union else 0.0


def shapely_iou(a, b):
    def poly(bx):
        cx, cy, w, h = bx
        return shapely_box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    pa, pb = poly(a), poly(b)
    inter = pa.intersection(pb).area
    if inter <= 0:
        return 0.0
    return inter / pa.union(pb).area


def greedy_nms_trace(items, threshold, iou_fn):
    """Textbook greedy NMS over ``(box, conf, cls)`` tuples; returns kept input indices."""
    remaining = sorted(range(len(items)), key=lambda i: (-items[i][1], i))
    kept = []
    while remaining:
        top = remaining.pop(0)
        kept.append(top)
        remaining = [
            i for i in remaining
            if items[i][2] != items[top][2] or iou_fn(items[i][0], items[top][0]) <= threshold
        ]
    return kept


def greedy_match_flags(det_boxes, det_confs, gt_boxes, threshold, iou_fn):
    """Per-detection TP flags from confidence-ordered greedy matching."""
    order = sorted(range(len(det_boxes)), key=lambda i: (-det_confs[i], i))
    taken = set()
    flags = [False] * len(det_boxes)
    for d in order:
        best, best_iou = None, None
        for g, gb in enumerate(gt_boxes):
            if g in taken:
                continue
            v = iou_fn(det_boxes[d], gb)
            if v >= threshold and (best_iou is None or v > best_iou):
                best, best_iou = g, v
        if best is not None:
            taken.add(best)
            flags[d] = True
    return flags


def brute_force_ap(confidences, flags, n_gt, n_points=101):
    """101-point AP by direct enumeration with exact rational recall levels.

    For every recall level, the interpolated precision is the maximum
    precision over all ranks whose recall reaches that level.
    """
    if n_gt == 0:
        return None
    order = sorted(range(len(confidences)), key=lambda i: (-confidences[i], i))
    ranks = []
    tp = 0
    for k, i in enumerate(order, start=1):
        tp += bool(flags[i])
        ranks.append((Fraction(tp, n_gt), Fraction(tp, k)))
    total = Fraction(0)
    for t in range(n_points):
        level = Fraction(t, n_points - 1)
        candidates = [p for r, p in ranks if r >= level]
        total += max(candidates) if candidates else 0
    return float(total / n_points)


def plain_iou(a, b):
    """Straight-line IoU of two ``(cx, cy, w, h)`` tuples, written without numpy."""
    ax1, ax2 = a[0] - a[2] / 2, a[0] + a[2] / 2
    ay1, ay2 = a[1] - a[3] / 2, a[1] + a[3] / 2
    bx1, bx2 = b[0] - b[2] / 2, b[0] + b[2] / 2
    by1, by2 = b[1] - b[3] / 2, b[1] + b[3] / 2
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter)
