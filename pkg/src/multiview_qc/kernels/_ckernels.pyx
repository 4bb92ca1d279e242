# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``.

Operation order matches the Python twin exactly; do not build with
``-ffast-math``.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

NAME = "cython"


cdef inline double _iou(double ax1, double ay1, double ax2, double ay2,
                        double bx1, double by1, double bx2, double by2) noexcept nogil:
    cdef double iw = (ax2 if ax2 < bx2 else bx2) - (ax1 if ax1 > bx1 else bx1)
    if iw <= 0.0:
        return 0.0
    cdef double ih = (ay2 if ay2 < by2 else by2) - (ay1 if ay1 > by1 else by1)
    if ih <= 0.0:
        return 0.0
    cdef double inter = iw * ih
    cdef double area_a = (ax2 - ax1) * (ay2 - ay1)
    cdef double area_b = (bx2 - bx1) * (by2 - by1)
    return inter / ((area_a + area_b) - inter)


def iou_corners(double ax1, double ay1, double ax2, double ay2,
                double bx1, double by1, double bx2, double by2):
    return _iou(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2)


def iou_matrix(a, b):
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], i, j
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] ov = out
    with nogil:
        for i in range(n):
            for j in range(m):
                ov[i, j] = _iou(av[i, 0], av[i, 1], av[i, 2], av[i, 3],
                                bv[j, 0], bv[j, 1], bv[j, 2], bv[j, 3])
    return out


def nms_keep(boxes, scores, classes, double iou_threshold):
    cdef double[:, ::1] bv = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    cdef double[::1] sv = np.ascontiguousarray(scores, dtype=np.float64)
    cdef cnp.int64_t[::1] cv = np.ascontiguousarray(classes, dtype=np.int64)
    cdef cnp.int64_t[::1] order = np.argsort(-np.asarray(sv), kind="stable").astype(np.int64)
    cdef Py_ssize_t n = order.shape[0], a, k, i, j, n_kept = 0
    kept = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] kv = kept
    cdef bint suppressed
    with nogil:
        for a in range(n):
            i = order[a]
            suppressed = False
            for k in range(n_kept):
                j = kv[k]
                if cv[j] != cv[i]:
                    continue
                if _iou(bv[j, 0], bv[j, 1], bv[j, 2], bv[j, 3],
                        bv[i, 0], bv[i, 1], bv[i, 2], bv[i, 3]) > iou_threshold:
                    suppressed = True
                    break
            if not suppressed:
                kv[n_kept] = i
                n_kept += 1
    return kept[:n_kept].copy()


def greedy_match(ious, order, double iou_threshold):
    arr = np.ascontiguousarray(ious, dtype=np.float64)
    if arr.ndim != 2:
        arr = arr.reshape(arr.shape[0], 0)
    cdef double[:, ::1] iv = arr
    cdef cnp.int64_t[::1] ov = np.ascontiguousarray(order, dtype=np.int64)
    cdef Py_ssize_t n_det = iv.shape[0], n_gt = iv.shape[1], a, d, g, best
    assigned = np.full(n_det, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] asv = assigned
    taken = np.zeros(n_gt, dtype=np.uint8)
    cdef cnp.uint8_t[::1] tv = taken
    cdef double best_iou, v
    with nogil:
        for a in range(ov.shape[0]):
            d = ov[a]
            best = -1
            best_iou = -1.0
            for g in range(n_gt):
                if tv[g]:
                    continue
                v = iv[d, g]
                if v >= iou_threshold and v > best_iou:
                    best = g
                    best_iou = v
            if best >= 0:
                tv[best] = 1
                asv[d] = best
    return assigned


def interp_ap(recall, precision, int n_points=101):
    cdef double[::1] rv = np.ascontiguousarray(recall, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(precision, dtype=np.float64)
    cdef Py_ssize_t n = rv.shape[0], i, j = 0
    cdef int t, steps = n_points - 1
    env = np.zeros(n, dtype=np.float64)
    cdef double[::1] ev = env
    cdef double running = 0.0, total = 0.0, level
    with nogil:
        for i in range(n - 1, -1, -1):
            if pv[i] > running:
                running = pv[i]
            ev[i] = running
        for t in range(n_points):
            level = <double>t / <double>steps
            while j < n and rv[j] < level:
                j += 1
            if j < n:
                total += ev[j]
    return total / n_points
