"""Compiled and pure-Python kernels must agree bit for bit."""

import numpy as np
import pytest

from multiview_qc import kernels

BACKENDS = kernels.available_backends()


def _random_corners(rng, n):
    c = rng.uniform(0.1, 0.9, size=(n, 2))
    s = rng.uniform(0.02, 0.3, size=(n, 2))
    return np.hstack([c - s / 2, c + s / 2])


def test_default_backend_is_loaded():
    assert kernels.BACKEND in BACKENDS


@pytest.mark.skipif("cython" not in BACKENDS, reason="extension not built")
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    rng = np.random.default_rng(seed)
    a = _random_corners(rng, 40)
    b = _random_corners(rng, 30)
    assert np.array_equal(py.iou_matrix(a, b), cy.iou_matrix(a, b))

    scores = rng.random(40)
    scores[::7] = 0.5  # ties
    classes = rng.integers(0, 2, 40)
    for thr in (0.1, 0.5, 0.9):
        assert np.array_equal(py.nms_keep(a, scores, classes, thr), cy.nms_keep(a, scores, classes, thr))

    ious = py.iou_matrix(a, b)
    order = np.argsort(-scores, kind="stable")
    for thr in (0.05, 0.3, 0.5):
        assert np.array_equal(py.greedy_match(ious, order, thr), cy.greedy_match(ious, order, thr))

    flags = rng.random(40) < 0.6
    tp = np.cumsum(flags)
    rec, prec = tp / 25.0, tp / np.arange(1, 41)
    assert py.interp_ap(rec, prec) == cy.interp_ap(rec, prec)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_empty_inputs(name):
    k = BACKENDS[name]
    z = np.zeros((0, 4))
    assert k.iou_matrix(z, z).shape == (0, 0)
    assert k.nms_keep(z, np.zeros(0), np.zeros(0, dtype=np.int64), 0.5).tolist() == []
    assert k.greedy_match(np.zeros((3, 0)), np.arange(3), 0.5).tolist() == [-1, -1, -1]
    assert k.interp_ap(np.zeros(0), np.zeros(0)) == 0.0


def test_pure_python_forced(monkeypatch):
    import importlib

    monkeypatch.setenv("MVQC_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("MVQC_PURE_PYTHON")
        importlib.reload(kernels)
