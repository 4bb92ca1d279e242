"""Pure-Python implementations of the hot geometry/matching loops.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same floating-point operation order, so both backends return
bit-identical results.
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def iou_corners(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2):
    iw = min(ax2, bx2) - max(ax1, bx1)
    if iw <= 0.0:
        return 0.0
    ih = min(ay2, by2) - max(ay1, by1)
    if ih <= 0.0:
        return 0.0
    inter = iw * ih
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    return inter / ((area_a + area_b) - inter)


def iou_matrix(a, b):
    """IoU between every row of ``a`` (N,4) and ``b`` (M,4), corner format."""
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    al = a.tolist()
    bl = b.tolist()
    for i, (ax1, ay1, ax2, ay2) in enumerate(al):
        row = out[i]
        for j, (bx1, by1, bx2, by2) in enumerate(bl):
            row[j] = iou_corners(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2)
    return out


def nms_keep(boxes, scores, classes, iou_threshold):
    """Greedy class-wise NMS; returns kept indices, highest score first.

    Equal scores keep input order. A candidate is dropped when its IoU with
    an already-kept box of the same class is strictly above the threshold.
    """
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    classes = np.ascontiguousarray(classes, dtype=np.int64)
    order = np.argsort(-scores, kind="stable").tolist()
    bl = boxes.tolist()
    cl = classes.tolist()
    kept: list[int] = []
    for i in order:
        x1, y1, x2, y2 = bl[i]
        c = cl[i]
        suppressed = False
        for k in kept:
            if cl[k] != c:
                continue
            kx1, ky1, kx2, ky2 = bl[k]
            if iou_corners(kx1, ky1, kx2, ky2, x1, y1, x2, y2) > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(i)
    return np.asarray(kept, dtype=np.int64)


def greedy_match(ious, order, iou_threshold):
    """Assign detections (rows) to ground truths (columns) greedily.

    Detections are visited in ``order``; each takes the unmatched GT with the
    highest IoU at or above the threshold, lowest GT index on ties. Returns a
    per-detection array of GT indices, ``-1`` for unmatched.
    """
    ious = np.ascontiguousarray(ious, dtype=np.float64)
    n_det = ious.shape[0]
    n_gt = ious.shape[1] if ious.ndim == 2 else 0
    assigned = [-1] * n_det
    taken = [False] * n_gt
    rows = ious.tolist()
    for d in np.asarray(order, dtype=np.int64).tolist():
        row = rows[d]
        best = -1
        best_iou = -1.0
        for g in range(n_gt):
            if taken[g]:
                continue
            v = row[g]
            if v >= iou_threshold and v > best_iou:
                best = g
                best_iou = v
        if best >= 0:
            taken[best] = True
            assigned[d] = best
    return np.asarray(assigned, dtype=np.int64)


def interp_ap(recall, precision, n_points=101):
    """Interpolated AP sampled at ``n_points`` evenly spaced recall levels.

    ``recall`` must be non-decreasing. The precision envelope is the running
    maximum from the right; recall levels beyond the last point score 0.
    """
    rl = np.asarray(recall, dtype=np.float64).tolist()
    pl = np.asarray(precision, dtype=np.float64).tolist()
    n = len(rl)
    env = [0.0] * n
    running = 0.0
    for i in range(n - 1, -1, -1):
        if pl[i] > running:
            running = pl[i]
        env[i] = running
    total = 0.0
    steps = n_points - 1
    j = 0
    for t in range(n_points):
        level = t / steps
        while j < n and rl[j] < level:
            j += 1
        if j < n:
            total += env[j]
    return total / n_points
