"""Per-view detector backends: file replay and a calibrated synthetic model."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .dataset import (
    CAMERAS,
    DEFAULT_CLASS_NAMES,
    AnnotationRecord,
    CameraId,
    DatasetManifest,
    LabelParseError,
    format_float,
    parse_box_lines,
)
from .geometry import BBox, nms_indices

SYNTH_NMS_THRESHOLD = 0.7
# Noise draws beyond this many sigmas are clipped.
NOISE_TRUNCATION = 3.0
DEFAULT_INSTANCES_PER_IMAGE = 4.0


class DetectorError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    class_id: int
    confidence: float
    camera: CameraId
    image_id: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise DetectorError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


@dataclass(frozen=True)
class DetectorProfile:
    """Perturbation model turning ground truth into detector output.

    ``sigma`` is the std-dev of center jitter in normalized units and of
    log-width/log-height jitter.
    """

    recall: tuple[float, ...] = (1.0, 1.0)
    fp_rate: float = 0.0
    sigma: float = 0.0
    confusion: float = 0.0
    tp_confidence: BetaParams = BetaParams(9.0, 1.0)
    fp_confidence: BetaParams = BetaParams(2.0, 3.0)
    fp_size_range: tuple[float, float] = (0.02, 0.2)
    calibration: Mapping[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        probs = list(self.recall) + [self.confusion]
        if not self.recall or any(not 0.0 <= p <= 1.0 for p in probs):
            raise DetectorError(f"probabilities must lie in [0, 1]: recall={self.recall}, confusion={self.confusion}")
        if self.fp_rate < 0 or self.sigma < 0:
            raise DetectorError("fp_rate and sigma must be non-negative")
        for b in (self.tp_confidence, self.fp_confidence):
            if b.alpha <= 0 or b.beta <= 0:
                raise DetectorError(f"beta parameters must be positive, got {b}")
        lo, hi = self.fp_size_range
        if not 0 < lo <= hi <= 1:
            raise DetectorError(f"bad fp_size_range {self.fp_size_range}")

    def recall_for(self, class_id: int) -> float:
        return self.recall[class_id] if class_id < len(self.recall) else self.recall[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["calibration"] = dict(self.calibration)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> DetectorProfile:
        known = {"recall", "fp_rate", "sigma", "confusion", "tp_confidence", "fp_confidence", "fp_size_range", "calibration"}
        unknown = set(d) - known
        if unknown:
            raise DetectorError(f"unknown profile fields {sorted(unknown)}")
        kw = dict(d)
        if "recall" in kw:
            r = kw["recall"]
            kw["recall"] = tuple(r) if isinstance(r, (list, tuple)) else (float(r),)
        for key in ("tp_confidence", "fp_confidence"):
            if key in kw:
                kw[key] = BetaParams(**kw[key])
        if "fp_size_range" in kw:
            kw["fp_size_range"] = tuple(kw["fp_size_range"])
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> DetectorProfile:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def calibrate_profile(
    precision: float,
    recall: float,
    instances_per_image: float = DEFAULT_INSTANCES_PER_IMAGE,
    *,
    n_classes: int = 2,
    sigma: float = 0.002,
) -> DetectorProfile:
    """Profile whose expected precision and recall hit the given targets.

    Precision only pins the false-positive rate together with the number of
    true instances per image: ``fp = n * R * (1 - P) / P``.
    """
    if not 0 < precision <= 1 or not 0 <= recall <= 1:
        raise DetectorError("precision must be in (0, 1] and recall in [0, 1]")
    fp_rate = instances_per_image * recall * (1.0 - precision) / precision
    return DetectorProfile(
        recall=(recall,) * n_classes,
        fp_rate=fp_rate,
        sigma=sigma,
        calibration={"precision": precision, "recall": recall, "instances_per_image": instances_per_image},
    )


def preset_profile(camera: CameraId | str) -> DetectorProfile:
    """Shipped profile for one camera (``top``, ``middle`` or ``bottom``)."""
    cam = CameraId.parse(camera)
    text = resources.files("multiview_qc").joinpath("profiles", f"{cam.value}.json").read_text(encoding="utf-8")
    return DetectorProfile.from_dict(json.loads(text))


def preset_profiles() -> dict[CameraId, DetectorProfile]:
    return {cam: preset_profile(cam) for cam in CAMERAS}


# -- detection files --------------------------------------------------------


def parse_detection_file(
    text: str,
    camera: CameraId | str = CameraId.TOP,
    image_id: str = "",
    *,
    n_classes: int = len(DEFAULT_CLASS_NAMES),
) -> list[Detection]:
    cam = CameraId.parse(camera)
    out = []
    for line_no, class_id, box, extra, _ in parse_box_lines(text, 6, n_classes):
        conf = extra[0]
        if not 0.0 <= conf <= 1.0:
            raise LabelParseError(line_no, f"confidence {conf} outside [0, 1]")
        out.append(Detection(box, class_id, conf, cam, image_id))
    return out


def write_detection_file(detections: Sequence[Detection]) -> str:
    return "".join(
        " ".join(
            [str(d.class_id)]
            + [format_float(v) for v in (d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h, d.confidence)]
        )
        + "\n"
        for d in detections
    )


def apply_nms(detections: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    keep = nms_indices([(d.bbox, d.confidence, d.class_id) for d in detections], iou_threshold)
    return [detections[i] for i in keep]


# -- backends ---------------------------------------------------------------


class DetectorBackend(Protocol):
    def detect(self, image_id: str, camera: CameraId) -> list[Detection]: ...


def split_image_id(image_id: str) -> tuple[CameraId, str]:
    cam, _, stem = image_id.partition("/")
    return CameraId.parse(cam), stem


def detect(backend: DetectorBackend, image_ref: tuple[str, CameraId | str]) -> list[Detection]:
    image_id, camera = image_ref
    return backend.detect(image_id, CameraId.parse(camera))


class ReplayBackend:
    """Serves precomputed detections from ``detections/<camera>/<stem>.txt``.

    Files are taken as already NMS-filtered; pass ``nms_threshold`` to filter
    again on load.
    """

    def __init__(self, root: str | Path, *, nms_threshold: float | None = None,
                 n_classes: int = len(DEFAULT_CLASS_NAMES)):
        self.root = Path(root)
        self.nms_threshold = nms_threshold
        self.n_classes = n_classes

    def path_for(self, image_id: str, camera: CameraId) -> Path:
        _, stem = split_image_id(image_id) if "/" in image_id else (camera, image_id)
        return self.root / camera.value / f"{stem}.txt"

    def detect(self, image_id: str, camera: CameraId) -> list[Detection]:
        path = self.path_for(image_id, camera)
        if not path.is_file():
            raise KeyError(f"no detection file for {image_id!r} at {path}")
        dets = parse_detection_file(path.read_text(encoding="utf-8"), camera, image_id, n_classes=self.n_classes)
        if self.nms_threshold is not None:
            dets = apply_nms(dets, self.nms_threshold)
        return dets


class SyntheticBackend:
    def __init__(
        self,
        ground_truth: DatasetManifest | Sequence[AnnotationRecord],
        profiles: Mapping[CameraId, DetectorProfile],
        seed: int = 0,
        n_classes: int = len(DEFAULT_CLASS_NAMES),
    ):
        records = ground_truth.records if isinstance(ground_truth, DatasetManifest) else ground_truth
        self._gt = {r.image_id: r for r in records}
        self.profiles = dict(profiles)
        self.seed = seed
        self.n_classes = n_classes

    def detect(self, image_id: str, camera: CameraId) -> list[Detection]:
        try:
            rec = self._gt[image_id]
        except KeyError:
            raise KeyError(f"unknown image_id {image_id!r}") from None
        return synth_detect(rec, self.profiles[camera], self.seed, n_classes=self.n_classes)


def image_rng(seed: int, image_id: str) -> np.random.Generator:
    """Independent stream per (seed, image) so results do not depend on call order."""
    digest = hashlib.sha256(image_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, *words])))


def _truncated_normal(rng: np.random.Generator, sigma: float) -> float:
    z = rng.standard_normal()
    return sigma * min(max(z, -NOISE_TRUNCATION), NOISE_TRUNCATION)


def _jitter(rng: np.random.Generator, box: BBox, sigma: float) -> BBox:
    cx = box.cx + _truncated_normal(rng, sigma)
    cy = box.cy + _truncated_normal(rng, sigma)
    w = box.w * math.exp(_truncated_normal(rng, sigma))
    h = box.h * math.exp(_truncated_normal(rng, sigma))
    # keep the center inside so clamping always leaves positive area
    cx = min(max(cx, 0.0), 1.0)
    cy = min(max(cy, 0.0), 1.0)
    return BBox.clamped(cx, cy, min(w, 1.0), min(h, 1.0))[0]


def synth_detect(
    gt: AnnotationRecord,
    profile: DetectorProfile,
    seed: int,
    *,
    n_classes: int = len(DEFAULT_CLASS_NAMES),
) -> list[Detection]:
    """Perturb one image's ground truth into detections.

    Every instance survives with its class recall, gets jittered, may have its
    class flipped, and draws a true-positive confidence. Poisson false
    positives with uniform geometry are added, then NMS at 0.7.
    """
    rng = image_rng(seed, gt.image_id)
    dets: list[Detection] = []
    for inst in gt.instances:
        u_keep, u_flip = rng.random(2)
        if u_keep >= profile.recall_for(inst.class_id):
            continue
        box = _jitter(rng, inst.bbox, profile.sigma) if profile.sigma > 0 else inst.bbox
        cls = inst.class_id
        if u_flip < profile.confusion and n_classes > 1:
            others = [c for c in range(n_classes) if c != cls]
            cls = others[int(rng.integers(len(others)))]
        conf = float(rng.beta(profile.tp_confidence.alpha, profile.tp_confidence.beta))
        dets.append(Detection(box, cls, conf, gt.camera, gt.image_id))
    lo, hi = profile.fp_size_range
    for _ in range(int(rng.poisson(profile.fp_rate))):
        w, h = rng.uniform(lo, hi, size=2)
        cx = rng.uniform(w / 2, 1 - w / 2)
        cy = rng.uniform(h / 2, 1 - h / 2)
        box = BBox.clamped(float(cx), float(cy), float(w), float(h))[0]
        cls = int(rng.integers(n_classes))
        conf = float(rng.beta(profile.fp_confidence.alpha, profile.fp_confidence.beta))
        dets.append(Detection(box, cls, conf, gt.camera, gt.image_id))
    return apply_nms(dets, SYNTH_NMS_THRESHOLD)
