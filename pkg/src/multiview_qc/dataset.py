"""Three-camera screw/bolt dataset: YOLO labels, manifests, splits, checks."""

from __future__ import annotations

import enum
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import BBox, GeometryError

log = logging.getLogger(__name__)

MANIFEST_FORMAT = "mvqc-manifest"
MANIFEST_VERSION = 1
DEFAULT_CLASS_NAMES: tuple[str, ...] = ("fastened", "loose")
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")
SPLIT_TAGS = ("train", "val", "test", "unsplit")


class DatasetError(ValueError):
    pass


class LabelParseError(DatasetError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class TaxonomyError(DatasetError):
    def __init__(self, line_no: int, class_id: int, n_classes: int):
        super().__init__(f"line {line_no}: class {class_id} outside taxonomy of {n_classes} classes")
        self.line_no = line_no
        self.class_id = class_id


class SplitError(DatasetError):
    pass


class CameraId(str, enum.Enum):
    TOP = "top"
    MIDDLE = "middle"
    BOTTOM = "bottom"

    @classmethod
    def parse(cls, value: str | CameraId) -> CameraId:
        if isinstance(value, CameraId):
            return value
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise DatasetError(f"unknown camera {value!r}; expected one of top/middle/bottom") from None


CAMERAS: tuple[CameraId, ...] = (CameraId.TOP, CameraId.MIDDLE, CameraId.BOTTOM)


@dataclass(frozen=True)
class GroundTruthInstance:
    class_id: int
    bbox: BBox


@dataclass(frozen=True)
class AnnotationRecord:
    image_id: str
    camera: CameraId
    instances: tuple[GroundTruthInstance, ...] = ()
    image_path: str = ""
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "camera": self.camera.value,
            "image_path": self.image_path,
            "instances": [
                [inst.class_id, inst.bbox.cx, inst.bbox.cy, inst.bbox.w, inst.bbox.h]
                for inst in self.instances
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> AnnotationRecord:
        return cls(
            image_id=d["image_id"],
            camera=CameraId.parse(d["camera"]),
            image_path=d.get("image_path", ""),
            instances=tuple(
                GroundTruthInstance(int(c), BBox(float(x), float(y), float(w), float(h)))
                for c, x, y, w, h in d.get("instances", [])
            ),
        )


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[AnnotationRecord, ...] = ()
    split_tag: str = "unsplit"
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if self.split_tag not in SPLIT_TAGS:
            raise DatasetError(f"unknown split tag {self.split_tag!r}")
        seen: set[str] = set()
        for r in self.records:
            if r.image_id in seen:
                raise DatasetError(f"duplicate image_id {r.image_id!r}")
            seen.add(r.image_id)

    def __len__(self) -> int:
        return len(self.records)

    def camera_counts(self) -> dict[CameraId, int]:
        counts = Counter(r.camera for r in self.records)
        return {cam: counts.get(cam, 0) for cam in CAMERAS}

    def by_camera(self, camera: CameraId) -> list[AnnotationRecord]:
        return [r for r in self.records if r.camera is camera]

    def get(self, image_id: str) -> AnnotationRecord:
        for r in self.records:
            if r.image_id == image_id:
                return r
        raise KeyError(image_id)

    def to_json(self) -> str:
        doc = {
            "format": MANIFEST_FORMAT,
            "format_version": MANIFEST_VERSION,
            "split_tag": self.split_tag,
            "class_names": list(self.class_names),
            "camera_counts": {c.value: n for c, n in self.camera_counts().items()},
            "records": [r.to_dict() for r in self.records],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> DatasetManifest:
        doc = json.loads(text)
        if doc.get("format") != MANIFEST_FORMAT:
            raise DatasetError(f"not a manifest file (format={doc.get('format')!r})")
        if doc.get("format_version") != MANIFEST_VERSION:
            raise DatasetError(
                f"manifest format_version {doc.get('format_version')} unsupported (expected {MANIFEST_VERSION})"
            )
        return cls(
            records=tuple(AnnotationRecord.from_dict(r) for r in doc["records"]),
            split_tag=doc["split_tag"],
            class_names=tuple(doc["class_names"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> DatasetManifest:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


# -- label files ------------------------------------------------------------


def _parse_fields(line: str, line_no: int, n_fields: int) -> tuple[int, list[float]]:
    parts = line.split()
    if len(parts) != n_fields:
        raise LabelParseError(line_no, f"expected {n_fields} fields, got {len(parts)}: {line!r}")
    try:
        cls_f = float(parts[0])
    except ValueError:
        raise LabelParseError(line_no, f"bad class field {parts[0]!r}") from None
    if not cls_f.is_integer():
        raise LabelParseError(line_no, f"class must be an integer, got {parts[0]!r}")
    try:
        vals = [float(p) for p in parts[1:]]
    except ValueError:
        raise LabelParseError(line_no, f"non-numeric field in {line!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise LabelParseError(line_no, f"non-finite value in {line!r}")
    return int(cls_f), vals


def parse_box_lines(
    text: str, n_fields: int, n_classes: int
) -> Iterable[tuple[int, int, BBox, list[float], bool]]:
    """Yield ``(line_no, class_id, bbox, extra_fields, was_clamped)`` per nonempty line."""
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        class_id, vals = _parse_fields(line, line_no, n_fields)
        if not 0 <= class_id < n_classes:
            raise TaxonomyError(line_no, class_id, n_classes)
        try:
            box, clamped = BBox.clamped(*vals[:4])
        except GeometryError as exc:
            raise LabelParseError(line_no, str(exc)) from None
        yield line_no, class_id, box, vals[4:], clamped


def parse_label_file(
    text: str,
    image_id: str,
    camera: CameraId | str,
    *,
    image_path: str = "",
    class_names: Sequence[str] = DEFAULT_CLASS_NAMES,
) -> AnnotationRecord:
    camera = CameraId.parse(camera)
    instances = []
    warnings = []
    for line_no, class_id, box, _, clamped in parse_box_lines(text, 5, len(class_names)):
        if clamped:
            warnings.append(f"{image_id}: line {line_no} clamped to frame")
        instances.append(GroundTruthInstance(class_id, box))
    for w in warnings:
        log.warning(w)
    return AnnotationRecord(image_id, camera, tuple(instances), image_path, tuple(warnings))


def format_float(v: float) -> str:
    return repr(float(v))


def write_label_file(record: AnnotationRecord) -> str:
    lines = [
        " ".join([str(i.class_id)] + [format_float(v) for v in (i.bbox.cx, i.bbox.cy, i.bbox.w, i.bbox.h)])
        for i in record.instances
    ]
    return "".join(line + "\n" for line in lines)


# -- manifest construction --------------------------------------------------


def _list_camera_dirs(base: Path) -> dict[CameraId, Path]:
    out: dict[CameraId, Path] = {}
    if not base.is_dir():
        return out
    for child in sorted(base.iterdir()):
        if child.is_dir():
            try:
                cam = CameraId(child.name.lower())
            except ValueError:
                raise DatasetError(f"unknown camera directory {child}") from None
            out[cam] = child
    return out


def build_manifest(
    root_dir: str | Path,
    class_names: Sequence[str] = DEFAULT_CLASS_NAMES,
) -> DatasetManifest:
    """Scan ``images/<camera>/`` and ``labels/<camera>/`` under ``root_dir``.

    Image ids are ``<camera>/<stem>``. Images without a label file get an empty
    instance list and a warning.
    """
    root = Path(root_dir)
    warnings: list[str] = []
    image_dirs = _list_camera_dirs(root / "images")
    label_dirs = _list_camera_dirs(root / "labels")
    if not image_dirs:
        warnings.append(f"no images found under {root / 'images'}")
    records: list[AnnotationRecord] = []
    for cam in CAMERAS:
        if cam not in image_dirs:
            continue
        stems: dict[str, Path] = {}
        for img in sorted(image_dirs[cam].iterdir()):
            if not img.is_file() or img.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            if img.stem in stems:
                raise DatasetError(f"duplicate stem {img.stem!r} in {image_dirs[cam]}")
            stems[img.stem] = img
        for stem, img in stems.items():
            image_id = f"{cam.value}/{stem}"
            rel = img.relative_to(root).as_posix()
            label = label_dirs[cam] / f"{stem}.txt" if cam in label_dirs else None
            if label is None or not label.is_file():
                warnings.append(f"{image_id}: no label file")
                records.append(AnnotationRecord(image_id, cam, (), rel))
                continue
            rec = parse_label_file(
                label.read_text(encoding="utf-8"), image_id, cam, image_path=rel, class_names=class_names
            )
            warnings.extend(rec.warnings)
            records.append(rec)
    for w in warnings:
        log.warning(w)
    return DatasetManifest(tuple(records), "unsplit", tuple(class_names), tuple(warnings))


# -- splitting --------------------------------------------------------------


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Train and val sizes floor ``n*ratio``; test takes the remainder."""
    n_train = math.floor(n * ratios[0] + 1e-9)
    n_val = math.floor(n * ratios[1] + 1e-9)
    return n_train, n_val, n - n_train - n_val


def _stratum_rng(seed: int, stratum_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stratum_index])))


def stratified_split(
    manifest: DatasetManifest,
    ratios: Sequence[float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Per-camera shuffled split into train/val/test manifests.

    Each camera stratum is ordered by image id before a PCG64 shuffle seeded
    from ``(seed, camera)``, so the result depends only on the seed and the
    stratum contents, not on input order.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise SplitError(f"ratios must be three positive values, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must sum to 1, got {sum(ratios)!r}")
    parts: list[list[AnnotationRecord]] = [[], [], []]
    for idx, cam in enumerate(CAMERAS):
        stratum = sorted(manifest.by_camera(cam), key=lambda r: r.image_id)
        if not stratum:
            continue
        if len(stratum) < 3:
            raise SplitError(f"camera {cam.value} has {len(stratum)} records; need at least 3")
        perm = _stratum_rng(seed, idx).permutation(len(stratum))
        shuffled = [stratum[i] for i in perm]
        n_train, n_val, _ = split_sizes(len(shuffled), ratios)
        parts[0].extend(shuffled[:n_train])
        parts[1].extend(shuffled[n_train : n_train + n_val])
        parts[2].extend(shuffled[n_train + n_val :])
    return tuple(
        DatasetManifest(tuple(recs), tag, manifest.class_names)
        for recs, tag in zip(parts, ("train", "val", "test"))
    )  # type: ignore[return-value]


# -- validation -------------------------------------------------------------


@dataclass(frozen=True)
class ValidationIssue:
    kind: str  # DuplicateId | MissingImage
    image_id: str
    detail: str = ""


@dataclass
class ValidationReport:
    issues: list[ValidationIssue]
    camera_counts: dict[str, int]
    empty_label_counts: dict[str, int]
    class_histograms: dict[str, dict[str, int]]

    @property
    def ok(self) -> bool:
        return not self.issues

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "issues": [vars(i) for i in self.issues],
            "camera_counts": self.camera_counts,
            "empty_label_counts": self.empty_label_counts,
            "class_histograms": self.class_histograms,
        }


def validate(
    manifest: DatasetManifest | Sequence[AnnotationRecord],
    root_dir: str | Path | None = None,
    class_names: Sequence[str] | None = None,
) -> ValidationReport:
    """Report-only consistency check.

    Accepts a raw record sequence as well so that duplicate ids, which a
    ``DatasetManifest`` refuses to hold, can still be reported.
    """
    if isinstance(manifest, DatasetManifest):
        records: Sequence[AnnotationRecord] = manifest.records
        class_names = class_names or manifest.class_names
    else:
        records = manifest
        class_names = class_names or DEFAULT_CLASS_NAMES
    issues: list[ValidationIssue] = []
    seen: set[str] = set()
    for r in records:
        if r.image_id in seen:
            issues.append(ValidationIssue("DuplicateId", r.image_id))
        seen.add(r.image_id)
        if root_dir is not None and r.image_path and not (Path(root_dir) / r.image_path).is_file():
            issues.append(ValidationIssue("MissingImage", r.image_id, r.image_path))
    counts = Counter(r.camera for r in records)
    empty = Counter(r.camera for r in records if not r.instances)
    hist: dict[str, dict[str, int]] = {}
    for cam in CAMERAS:
        c = Counter(i.class_id for r in records if r.camera is cam for i in r.instances)
        hist[cam.value] = {
            (class_names[k] if k < len(class_names) else str(k)): c.get(k, 0) for k in range(len(class_names))
        }
    return ValidationReport(
        issues=issues,
        camera_counts={cam.value: counts.get(cam, 0) for cam in CAMERAS},
        empty_label_counts={cam.value: empty.get(cam, 0) for cam in CAMERAS},
        class_histograms=hist,
    )
