"""Synthetic three-camera station: registry, ground truth, detections, fixtures."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..dataset import CAMERAS, AnnotationRecord, CameraId, GroundTruthInstance, write_label_file
from ..detector import Detection, DetectorProfile, preset_profiles, synth_detect, write_detection_file
from ..fusion import (
    ComponentRegistry,
    Component,
    FastenerState,
    Policy,
    ViewSpec,
    assembly_verdict,
    associate,
)
from ..geometry import BBox

FASTENED, LOOSE = 0, 1
# Vertical band each camera sees the fasteners in.
_CAMERA_ROWS = {CameraId.TOP: 0.3, CameraId.MIDDLE: 0.5, CameraId.BOTTOM: 0.7}


def default_registry(n_components: int = 4, roi_size: float = 0.08) -> ComponentRegistry:
    """Fasteners spaced evenly along x, seen in a different band by each camera."""
    comps = []
    for k in range(n_components):
        x = (k + 1) / (n_components + 1)
        views = {cam: ViewSpec(BBox(x, _CAMERA_ROWS[cam], roi_size, roi_size)) for cam in CAMERAS}
        comps.append(Component(f"C{k + 1:02d}", views))
    return ComponentRegistry(tuple(comps))


def assembly_ids(n: int) -> list[str]:
    return [f"A{i:05d}" for i in range(n)]


@dataclass
class SyntheticStation:
    registry: ComponentRegistry
    truth: dict[str, dict[str, FastenerState]]
    records: dict[CameraId, list[AnnotationRecord]]

    def all_records(self) -> list[AnnotationRecord]:
        return [r for cam in CAMERAS for r in self.records[cam]]


def make_station(
    n_assemblies: int,
    registry: ComponentRegistry | None = None,
    defect_rate: float = 0.1,
    seed: int = 0,
) -> SyntheticStation:
    """Physical truth per assembly and the ground-truth labels each camera would hold."""
    registry = registry or default_registry()
    rng = np.random.Generator(np.random.PCG64(seed))
    truth: dict[str, dict[str, FastenerState]] = {}
    records: dict[CameraId, list[AnnotationRecord]] = {cam: [] for cam in CAMERAS}
    for aid in assembly_ids(n_assemblies):
        states = {
            c.component_id: FastenerState.LOOSE if rng.random() < defect_rate else FastenerState.FASTENED
            for c in registry.components
        }
        truth[aid] = states
        for cam in CAMERAS:
            insts = tuple(
                GroundTruthInstance(LOOSE if states[c.component_id] is FastenerState.LOOSE else FASTENED,
                                    c.views[cam].roi)
                for c in registry.visible(cam)
            )
            records[cam].append(AnnotationRecord(f"{cam.value}/{aid}", cam, insts, f"images/{cam.value}/{aid}.png"))
    return SyntheticStation(registry, truth, records)


def detect_station(
    station: SyntheticStation,
    profiles: Mapping[CameraId, DetectorProfile] | None = None,
    seed: int = 0,
) -> dict[CameraId, dict[str, list[Detection]]]:
    """Synthetic detections per camera, keyed by assembly id."""
    profiles = profiles or preset_profiles()
    out: dict[CameraId, dict[str, list[Detection]]] = {}
    for cam in CAMERAS:
        out[cam] = {
            rec.image_id.split("/", 1)[1]: synth_detect(rec, profiles[cam], seed) for rec in station.records[cam]
        }
    return out


@dataclass
class FusionRates:
    """How often truly loose components end up flagged Loose."""

    n_loose: int
    fused_hits: int
    view_hits: dict[CameraId, int] = field(default_factory=dict)

    @property
    def fused_rate(self) -> float:
        return self.fused_hits / self.n_loose

    def view_rate(self, cam: CameraId) -> float:
        return self.view_hits[cam] / self.n_loose


def measure_fusion(
    station: SyntheticStation,
    detections: Mapping[CameraId, Mapping[str, Sequence[Detection]]],
    policy: Policy | str = Policy.DEFECT_PRIORITY,
    missing: Sequence[CameraId] = (),
) -> FusionRates:
    missing = tuple(missing)
    n_loose = 0
    fused_hits = 0
    view_hits = {cam: 0 for cam in CAMERAS}
    for aid, states in station.truth.items():
        verdicts = []
        per_view: dict[tuple[str, CameraId], FastenerState] = {}
        for cam in CAMERAS:
            if cam in missing:
                continue
            for v in associate(detections[cam][aid], station.registry, cam):
                verdicts.append(v)
                per_view[(v.component_id, cam)] = v.state
        av = assembly_verdict(aid, verdicts, station.registry, policy, missing)
        for comp in av.components:
            if states[comp.component_id] is not FastenerState.LOOSE:
                continue
            n_loose += 1
            fused_hits += comp.state is FastenerState.LOOSE
            for cam in CAMERAS:
                view_hits[cam] += per_view.get((comp.component_id, cam)) is FastenerState.LOOSE
    return FusionRates(n_loose, fused_hits, view_hits)


def write_station(
    out_dir: str | Path,
    station: SyntheticStation,
    detections: Mapping[CameraId, Mapping[str, Sequence[Detection]]] | None = None,
) -> Path:
    """Lay the station out as a dataset root (images, labels, detections, registry, truth)."""
    root = Path(out_dir)
    for cam in CAMERAS:
        for sub in ("images", "labels", "detections"):
            (root / sub / cam.value).mkdir(parents=True, exist_ok=True)
        for rec in station.records[cam]:
            stem = rec.image_id.split("/", 1)[1]
            (root / "images" / cam.value / f"{stem}.png").touch()
            (root / "labels" / cam.value / f"{stem}.txt").write_text(write_label_file(rec), encoding="utf-8")
            if detections is not None:
                (root / "detections" / cam.value / f"{stem}.txt").write_text(
                    write_detection_file(detections[cam][stem]), encoding="utf-8"
                )
    station.registry.save(root / "registry.json")
    with open(root / "truth.jsonl", "w", encoding="utf-8") as fh:
        for aid, states in station.truth.items():
            fh.write(json.dumps({"assembly_id": aid, "components": {k: v.value for k, v in states.items()}}) + "\n")
    return root


def reference_fixture(
    n_gt: int = 1000,
    n_missed: int = 1,
    per_image: int = 4,
    seed: int = 0,
) -> tuple[list[AnnotationRecord], list[Detection]]:
    """Ground truth and detections whose metrics land on 1.000 / 0.999 / >=0.995.

    Instances alternate between the two classes; every detection sits exactly
    on its ground truth with a high confidence, no false positives, and the
    last ``n_missed`` instances of the loose class go undetected.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    n_images = -(-n_gt // per_image)
    records: list[AnnotationRecord] = []
    dets: list[Detection] = []
    made = 0
    loose_slots = []
    for i in range(n_images):
        cam = CAMERAS[i % 3]
        image_id = f"{cam.value}/T{i:05d}"
        insts = []
        for k in range(min(per_image, n_gt - made)):
            box = BBox(0.1 + 0.2 * k, 0.5, 0.1, 0.1)
            cls = made % 2
            insts.append(GroundTruthInstance(cls, box))
            if cls == LOOSE:
                loose_slots.append((image_id, cam, box))
            made += 1
        records.append(AnnotationRecord(image_id, cam, tuple(insts), f"images/{image_id}.png"))
    missed = set(loose_slots[len(loose_slots) - n_missed:]) if n_missed else set()
    for rec in records:
        for inst in rec.instances:
            if (rec.image_id, rec.camera, inst.bbox) in missed:
                continue
            dets.append(Detection(inst.bbox, inst.class_id, float(rng.uniform(0.85, 0.99)), rec.camera, rec.image_id))
    return records, dets


def write_reference_fixture(out_dir: str | Path, **kw) -> Path:
    records, dets = reference_fixture(**kw)
    root = Path(out_dir)
    by_image: dict[str, list[Detection]] = {}
    for d in dets:
        by_image.setdefault(d.image_id, []).append(d)
    for rec in records:
        cam, stem = rec.camera.value, rec.image_id.split("/", 1)[1]
        for sub in ("images", "labels", "detections"):
            (root / sub / cam).mkdir(parents=True, exist_ok=True)
        (root / "images" / cam / f"{stem}.png").touch()
        (root / "labels" / cam / f"{stem}.txt").write_text(write_label_file(rec), encoding="utf-8")
        (root / "detections" / cam / f"{stem}.txt").write_text(
            write_detection_file(by_image.get(rec.image_id, [])), encoding="utf-8"
        )
    return root
