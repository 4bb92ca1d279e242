import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import boxes
from oracles import greedy_nms_trace, raster_iou, shapely_iou
from multiview_qc.geometry import BBox, GeometryError, area, iou, iou_matrix, nms


@pytest.mark.parametrize(
    "box, expected",
    [
        (BBox(0.5, 0.5, 1.0, 1.0), 1.0),
        (BBox(0.5, 0.5, 0.5, 0.5), 0.25),
        (BBox(0.25, 0.25, 0.1, 0.2), 0.02),
    ],
)
def test_area(box, expected):
    assert area(box) == pytest.approx(expected, abs=1e-15)


def test_iou_identical_is_exactly_one():
    b = BBox(0.31, 0.47, 0.123, 0.077)
    assert iou(b, b) == 1.0


def test_iou_disjoint():
    assert iou(BBox(0.1, 0.1, 0.1, 0.1), BBox(0.9, 0.9, 0.1, 0.1)) == 0.0


def test_iou_edge_touching_is_zero():
    assert iou(BBox(0.25, 0.5, 0.5, 0.5), BBox(0.75, 0.5, 0.5, 0.5)) == 0.0
    assert iou(BBox(0.5, 0.25, 0.2, 0.5), BBox(0.5, 0.75, 0.2, 0.5)) == 0.0


def test_iou_half_overlap_matches_raster_oracle():
    a, b = BBox(0.5, 0.5, 0.4, 0.4), BBox(0.7, 0.5, 0.4, 0.4)
    expected = raster_iou((0.5, 0.5, 0.4, 0.4), (0.7, 0.5, 0.4, 0.4))
    assert iou(a, b) == pytest.approx(expected, abs=1e-3)
    assert iou(a, b) == pytest.approx(1 / 3, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(boxes(), boxes())
def test_iou_matches_polygon_oracle(a, b):
    assert iou(a, b) == pytest.approx(shapely_iou((a.cx, a.cy, a.w, a.h), (b.cx, b.cy, b.w, b.h)), abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


def test_iou_matrix_matches_pairwise():
    rng = np.random.default_rng(0)
    from conftest import random_box

    a = [random_box(rng) for _ in range(7)]
    b = [random_box(rng) for _ in range(5)]
    m = iou_matrix(a, b)
    assert m.shape == (7, 5)
    for i in range(7):
        for j in range(5):
            assert m[i, j] == iou(a[i], b[j])
    assert iou_matrix([], b).shape == (0, 5)


@pytest.mark.parametrize("bad", [(0.5, 0.5, 0.0, 0.1), (0.5, 0.5, 0.1, -0.1), (math.nan, 0.5, 0.1, 0.1)])
def test_degenerate_boxes_rejected(bad):
    with pytest.raises(GeometryError):
        BBox(*bad)
    with pytest.raises(GeometryError):
        BBox.clamped(*bad)


def test_clamped_overrun():
    box, clamped = BBox.clamped(0.98, 0.5, 0.1, 0.1)
    assert clamped
    x1, y1, x2, y2 = box.corners()
    assert x2 == pytest.approx(1.0) and x1 == pytest.approx(0.93)
    assert (y1, y2) == pytest.approx((0.45, 0.55))
    same, flag = BBox.clamped(0.5, 0.5, 0.1, 0.1)
    assert not flag and same == BBox(0.5, 0.5, 0.1, 0.1)


def test_box_outside_frame_requires_clamping():
    with pytest.raises(GeometryError):
        BBox(0.98, 0.5, 0.1, 0.1)
    with pytest.raises(GeometryError):
        BBox.clamped(1.5, 0.5, 0.1, 0.1)


# -- NMS ---------------------------------------------------------------------


def test_nms_empty():
    assert nms([], 0.5) == []


def test_nms_duplicate_suppressed():
    b = BBox(0.5, 0.5, 0.2, 0.2)
    assert nms([(b, 0.8, 0), (b, 0.9, 0)], 0.5) == [(b, 0.9, 0)]


def test_nms_chain_keeps_first_and_last():
    # A-B and B-C overlap at IoU 0.6; A-C only at 1/3, under the threshold
    a = BBox(0.2, 0.5, 0.2, 0.2)
    b = BBox(0.25, 0.5, 0.2, 0.2)
    c = BBox(0.3, 0.5, 0.2, 0.2)
    assert iou(a, b) == pytest.approx(0.6) and iou(b, c) == pytest.approx(0.6)
    assert iou(a, c) == pytest.approx(1 / 3)
    assert nms([(a, 0.9, 0), (b, 0.8, 0), (c, 0.7, 0)], 0.5) == [(a, 0.9, 0), (c, 0.7, 0)]


def test_nms_is_class_wise():
    b = BBox(0.5, 0.5, 0.2, 0.2)
    assert len(nms([(b, 0.9, 0), (b, 0.8, 1)], 0.5)) == 2


def test_nms_ties_keep_input_order():
    b1 = BBox(0.3, 0.5, 0.1, 0.1)
    b2 = BBox(0.7, 0.5, 0.1, 0.1)
    assert nms([(b1, 0.5, 0), (b2, 0.5, 0)], 0.5) == [(b1, 0.5, 0), (b2, 0.5, 0)]
    assert nms([(b1, 0.5, 0), (b1, 0.5, 0)], 0.5) == [(b1, 0.5, 0)]


@pytest.mark.parametrize("thr", [0.0, -0.1, 1.01])
def test_nms_rejects_bad_threshold(thr):
    with pytest.raises(ValueError):
        nms([(BBox(0.5, 0.5, 0.1, 0.1), 0.9, 0)], thr)


detections = st.lists(
    st.tuples(boxes(0.05, 0.4), st.floats(0, 1), st.integers(0, 1)),
    max_size=25,
)


@settings(max_examples=200, deadline=None)
@given(detections, st.floats(0.05, 1.0))
def test_nms_properties(dets, thr):
    out = nms(dets, thr)
    assert nms(out, thr) == out
    confs = [d[1] for d in out]
    assert confs == sorted(confs, reverse=True)
    for i in range(len(out)):
        for j in range(i + 1, len(out)):
            if out[i][2] == out[j][2]:
                assert iou(out[i][0], out[j][0]) <= thr
    expected = greedy_nms_trace(dets, thr, lambda a, b: shapely_iou((a.cx, a.cy, a.w, a.h), (b.cx, b.cy, b.w, b.h)))
    assert out == [dets[i] for i in expected]
