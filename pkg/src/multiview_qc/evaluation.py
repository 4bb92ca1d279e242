"""COCO-style detection metrics: greedy matching, PR curves, interpolated AP."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from statistics import fmean
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .dataset import DEFAULT_CLASS_NAMES, AnnotationRecord, DatasetManifest
from .geometry import BBox, iou_matrix

COCO_IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
RECALL_SAMPLES = 101


def _bbox(obj: Any) -> BBox:
    if isinstance(obj, BBox):
        return obj
    if isinstance(obj, tuple):
        return obj[0]
    return obj.bbox


def _conf(obj: Any) -> float:
    if isinstance(obj, tuple):
        return float(obj[1])
    return float(obj.confidence)


def confidence_order(confidences: Sequence[float]) -> np.ndarray:
    """Indices by descending confidence; equal confidences keep input order."""
    return np.argsort(-np.asarray(confidences, dtype=np.float64), kind="stable")


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_detections: tuple[int, ...]
    unmatched_gt: tuple[int, ...]


def _match_from_ious(ious: np.ndarray, confidences: Sequence[float], iou_threshold: float) -> np.ndarray:
    n_det = len(confidences)
    if n_det == 0:
        return np.zeros(0, dtype=np.int64)
    return kernels.greedy_match(ious, confidence_order(confidences), iou_threshold)


def match(detections: Sequence[Any], gts: Sequence[Any], iou_threshold: float = 0.5) -> MatchResult:
    """Greedy matching for one image and one class.

    ``detections`` are Detection objects or ``(bbox, confidence)`` pairs;
    ``gts`` are BBoxes or objects with a ``bbox`` attribute. Pairs are listed
    in the order detections were visited.
    """
    det_boxes = [_bbox(d) for d in detections]
    confs = [_conf(d) for d in detections]
    gt_boxes = [_bbox(g) for g in gts]
    ious = iou_matrix(det_boxes, gt_boxes)
    assigned = _match_from_ious(ious, confs, iou_threshold)
    pairs = tuple(
        (int(d), int(assigned[d]), float(ious[d, assigned[d]]))
        for d in confidence_order(confs)
        if assigned[d] >= 0
    )
    matched_gt = {g for _, g, _ in pairs}
    return MatchResult(
        pairs=pairs,
        unmatched_detections=tuple(i for i in range(len(detections)) if assigned[i] < 0),
        unmatched_gt=tuple(g for g in range(len(gts)) if g not in matched_gt),
    )


@dataclass(frozen=True)
class ImageMatch:
    """Outcome of matching one image for one class at one threshold."""

    confidences: tuple[float, ...]
    is_tp: tuple[bool, ...]
    n_gt: int


@dataclass(frozen=True)
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    confidence: np.ndarray
    total_gt: int

    @property
    def defined(self) -> bool:
        return self.total_gt > 0

    def __len__(self) -> int:
        return len(self.recall)

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))

    @classmethod
    def from_points(cls, points: Sequence[tuple[float, float]], confidences: Sequence[float] | None = None,
                    total_gt: int = 1) -> PRCurve:
        r = np.array([p[0] for p in points], dtype=np.float64)
        p = np.array([p[1] for p in points], dtype=np.float64)
        if confidences is None:
            confidences = np.linspace(1.0, 0.0, len(points) + 2)[1:-1] if points else []
        return cls(r, p, np.asarray(confidences, dtype=np.float64), total_gt)


def pr_curve(results: Iterable[ImageMatch]) -> PRCurve:
    """Pool per-image matches and build one point per detection rank."""
    confs: list[float] = []
    flags: list[bool] = []
    total_gt = 0
    for res in results:
        confs.extend(res.confidences)
        flags.extend(res.is_tp)
        total_gt += res.n_gt
    if total_gt == 0 or not confs:
        empty = np.zeros(0, dtype=np.float64)
        return PRCurve(empty, empty.copy(), empty.copy(), total_gt)
    order = confidence_order(confs)
    tp = np.asarray(flags, dtype=np.float64)[order]
    tp_cum = np.cumsum(tp)
    ranks = np.arange(1, len(tp) + 1, dtype=np.float64)
    return PRCurve(tp_cum / total_gt, tp_cum / ranks, np.asarray(confs, dtype=np.float64)[order], total_gt)


def average_precision(curve: PRCurve, n_points: int = RECALL_SAMPLES) -> float | None:
    """Interpolated AP over ``n_points`` recall levels; None when no GT exists."""
    if not curve.defined:
        return None
    if len(curve) == 0:
        return 0.0
    return float(kernels.interp_ap(curve.recall, curve.precision, n_points))


def interpolated_samples(curve: PRCurve, n_points: int = RECALL_SAMPLES) -> list[tuple[float, float]]:
    """The monotone precision envelope sampled at the AP recall levels."""
    levels = [t / (n_points - 1) for t in range(n_points)]
    if len(curve) == 0:
        return [(lv, 0.0) for lv in levels]
    env = np.maximum.accumulate(curve.precision[::-1])[::-1]
    idx = np.searchsorted(curve.recall, levels, side="left")
    return [(lv, float(env[i]) if i < len(env) else 0.0) for lv, i in zip(levels, idx)]


@dataclass(frozen=True)
class OperatingPoint:
    precision: float
    recall: float
    confidence: float

    @property
    def f1(self) -> float:
        s = self.precision + self.recall
        return 0.0 if s == 0 else 2 * self.precision * self.recall / s


def operating_point(curve: PRCurve) -> OperatingPoint | None:
    """Max-F1 point; earlier rank (higher confidence) wins ties."""
    if len(curve) == 0:
        return None
    p, r = curve.precision, curve.recall
    denom = p + r
    f1 = np.divide(2 * p * r, denom, out=np.zeros_like(p), where=denom > 0)
    best = int(np.argmax(f1))
    return OperatingPoint(float(p[best]), float(r[best]), float(curve.confidence[best]))


# -- dataset-level evaluation -----------------------------------------------


def _group_detections(detections: Mapping[str, Sequence[Any]] | Sequence[Any]) -> dict[str, list[Any]]:
    if isinstance(detections, Mapping):
        return {k: list(v) for k, v in detections.items()}
    out: dict[str, list[Any]] = {}
    for d in detections:
        out.setdefault(d.image_id, []).append(d)
    return out


def _group_gts(gts: DatasetManifest | Sequence[AnnotationRecord] | Mapping[str, Sequence[Any]]) -> dict[str, list[Any]]:
    if isinstance(gts, DatasetManifest):
        gts = gts.records
    if isinstance(gts, Mapping):
        return {k: list(v) for k, v in gts.items()}
    return {r.image_id: list(r.instances) for r in gts}


@dataclass
class EvalReport:
    class_names: tuple[str, ...]
    iou_thresholds: tuple[float, ...]
    ap: dict[str, list[float | None]]
    map_per_threshold: list[float | None]
    map50: float | None
    map50_95: float | None
    precision: float | None
    recall: float | None
    confidence: float | None
    per_class_operating_point: dict[str, OperatingPoint | None]
    pr_curves: dict[str, list[tuple[float, float]]]
    tp: int
    fp: int
    fn: int
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": {"class_names": list(self.class_names), "iou_thresholds": list(self.iou_thresholds),
                       "recall_samples": RECALL_SAMPLES, "operating_point": "max-f1"},
            "map50": self.map50,
            "map50_95": self.map50_95,
            "map_per_threshold": self.map_per_threshold,
            "ap": self.ap,
            "precision": self.precision,
            "recall": self.recall,
            "operating_confidence": self.confidence,
            "per_class_operating_point": {
                k: (None if v is None else {"precision": v.precision, "recall": v.recall, "confidence": v.confidence})
                for k, v in self.per_class_operating_point.items()
            },
            "counts": {"tp": self.tp, "fp": self.fp, "fn": self.fn},
            "pr_curves": {k: [list(p) for p in v] for k, v in self.pr_curves.items()},
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def csv_rows(self) -> list[tuple[str, float, float | None]]:
        return [
            (name, thr, aps[i])
            for name, aps in self.ap.items()
            for i, thr in enumerate(self.iou_thresholds)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "iou_threshold", "ap"])
        for name, thr, ap in self.csv_rows():
            w.writerow([name, f"{thr:.2f}", "" if ap is None else repr(ap)])
        return buf.getvalue()

    def render_table(self, label: str = "all") -> str:
        def f(v: float | None) -> str:
            return "  -  " if v is None else f"{v:.3f}"

        head = f"{'Subset':<10} {'Precision':>9} {'Recall':>7} {'mAP@50':>7} {'mAP@50-95':>9}"
        row = f"{label:<10} {f(self.precision):>9} {f(self.recall):>7} {f(self.map50):>7} {f(self.map50_95):>9}"
        return head + "\n" + row


def _mean_defined(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return fmean(vals) if vals else None


def map_at(
    detections: Mapping[str, Sequence[Any]] | Sequence[Any],
    gts: DatasetManifest | Sequence[AnnotationRecord] | Mapping[str, Sequence[Any]],
    iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
    class_names: Sequence[str] = DEFAULT_CLASS_NAMES,
) -> EvalReport:
    """Evaluate detections against ground truth across classes and IoU thresholds.

    Classes without ground truth are left out of every mean. mAP@50-95 is
    the mean of the per-threshold mAPs.
    """
    det_by_img = _group_detections(detections)
    gt_by_img = _group_gts(gts)
    images = sorted(set(det_by_img) | set(gt_by_img))
    thresholds = tuple(float(t) for t in iou_thresholds)
    n_cls = len(class_names)

    # per (class, image): confidences, IoU matrix, GT count; reused across thresholds
    prepared: list[list[tuple[list[float], np.ndarray, int]]] = [[] for _ in range(n_cls)]
    for img in images:
        dets = det_by_img.get(img, [])
        gt = gt_by_img.get(img, [])
        for c in range(n_cls):
            d_c = [d for d in dets if d.class_id == c]
            g_c = [g for g in gt if g.class_id == c]
            if not d_c and not g_c:
                continue
            ious = iou_matrix([d.bbox for d in d_c], [g.bbox for g in g_c])
            prepared[c].append(([d.confidence for d in d_c], ious, len(g_c)))

    ap: dict[str, list[float | None]] = {}
    curves50: dict[str, PRCurve] = {}
    pooled50: list[ImageMatch] = []
    for c, name in enumerate(class_names):
        per_thr: list[float | None] = []
        for thr in thresholds:
            matches = []
            for confs, ious, n_gt in prepared[c]:
                assigned = _match_from_ious(ious, confs, thr)
                matches.append(ImageMatch(tuple(confs), tuple(bool(a >= 0) for a in assigned), n_gt))
            curve = pr_curve(matches)
            per_thr.append(average_precision(curve))
            if thr == 0.5:
                curves50[name] = curve
                pooled50.extend(matches)
        ap[name] = per_thr

    map_per_threshold = [_mean_defined(ap[n][i] for n in class_names) for i in range(len(thresholds))]
    defined = [m for m in map_per_threshold if m is not None]
    map50 = map_per_threshold[thresholds.index(0.5)] if 0.5 in thresholds else None
    map50_95 = fmean(defined) if defined and len(defined) == len(thresholds) else None

    op = operating_point(pr_curve(pooled50)) if pooled50 else None
    tp = sum(sum(m.is_tp) for m in pooled50)
    n_det = sum(len(m.confidences) for m in pooled50)
    n_gt = sum(m.n_gt for m in pooled50)
    return EvalReport(
        class_names=tuple(class_names),
        iou_thresholds=thresholds,
        ap=ap,
        map_per_threshold=map_per_threshold,
        map50=map50,
        map50_95=map50_95,
        precision=None if op is None else op.precision,
        recall=None if op is None else op.recall,
        confidence=None if op is None else op.confidence,
        per_class_operating_point={n: operating_point(curves50[n]) if n in curves50 else None for n in class_names},
        pr_curves={n: interpolated_samples(curves50[n]) for n in class_names if n in curves50 and curves50[n].defined},
        tp=tp,
        fp=n_det - tp,
        fn=n_gt - tp,
    )


evaluate = map_at
