"""From per-camera detections to per-component and per-assembly verdicts."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .dataset import CAMERAS, CameraId
from .detector import Detection
from .geometry import BBox, iou

REGISTRY_FORMAT = "mvqc-registry"
REGISTRY_VERSION = 1
DEFAULT_ASSOC_IOU = 0.3
# ConfidenceWeighted: a smaller winning margin is resolved as Loose.
CONFIDENCE_MARGIN = 0.1


class FusionError(ValueError):
    pass


class ConfigurationError(FusionError):
    pass


class ContractViolation(FusionError):
    pass


class FastenerState(str, enum.Enum):
    FASTENED = "Fastened"
    LOOSE = "Loose"
    UNDETECTED = "Undetected"


class Policy(str, enum.Enum):
    DEFECT_PRIORITY = "DefectPriority"
    MAJORITY_VOTE = "MajorityVote"
    CONFIDENCE_WEIGHTED = "ConfidenceWeighted"

    @classmethod
    def parse(cls, value: str | Policy) -> Policy:
        if isinstance(value, Policy):
            return value
        for p in cls:
            if value.replace("-", "").replace("_", "").lower() == p.value.lower():
                return p
        raise ConfigurationError(f"unknown policy {value!r}; choose from {[p.value for p in cls]}")


class Overall(str, enum.Enum):
    PASS = "Pass"
    FAIL = "Fail"
    DEGRADED_PASS = "Degraded-Pass"
    DEGRADED_FAIL = "Degraded-Fail"


# class id -> state under the default {fastened, loose} taxonomy
DEFAULT_CLASS_STATES: dict[int, FastenerState] = {0: FastenerState.FASTENED, 1: FastenerState.LOOSE}


@dataclass(frozen=True)
class ViewSpec:
    roi: BBox
    visible: bool = True


@dataclass(frozen=True)
class Component:
    component_id: str
    views: Mapping[CameraId, ViewSpec]

    def visible_in(self, camera: CameraId) -> bool:
        spec = self.views.get(camera)
        return spec is not None and spec.visible

    def visible_cameras(self) -> list[CameraId]:
        return [c for c in CAMERAS if self.visible_in(c)]


@dataclass(frozen=True)
class ComponentRegistry:
    components: tuple[Component, ...]

    def __post_init__(self) -> None:
        ids = [c.component_id for c in self.components]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("component ids must be unique")
        for c in self.components:
            if not c.visible_cameras():
                raise ConfigurationError(f"component {c.component_id!r} is not visible in any camera")

    def __len__(self) -> int:
        return len(self.components)

    def visible(self, camera: CameraId) -> list[Component]:
        return [c for c in self.components if c.visible_in(camera)]

    def to_dict(self) -> dict:
        return {
            "format": REGISTRY_FORMAT,
            "format_version": REGISTRY_VERSION,
            "components": [
                {
                    "id": c.component_id,
                    "views": {
                        cam.value: {"roi": [v.roi.cx, v.roi.cy, v.roi.w, v.roi.h], "visible": v.visible}
                        for cam, v in c.views.items()
                    },
                }
                for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> ComponentRegistry:
        if doc.get("format") != REGISTRY_FORMAT:
            raise ConfigurationError(f"not a registry file (format={doc.get('format')!r})")
        if doc.get("format_version") != REGISTRY_VERSION:
            raise ConfigurationError(f"registry format_version {doc.get('format_version')} unsupported")
        comps = []
        for c in doc["components"]:
            views = {
                CameraId.parse(cam): ViewSpec(BBox(*map(float, v["roi"])), bool(v.get("visible", True)))
                for cam, v in c["views"].items()
            }
            comps.append(Component(str(c["id"]), views))
        return cls(tuple(comps))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> ComponentRegistry:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class ViewVerdict:
    component_id: str
    camera: CameraId
    state: FastenerState
    confidence: float = 0.0
    detection: Detection | None = None
    superseded: tuple[Detection, ...] = ()

    def __post_init__(self) -> None:
        if (self.state is FastenerState.UNDETECTED) != (self.detection is None):
            raise ContractViolation("Undetected verdicts carry no detection and vice versa")


@dataclass(frozen=True)
class Association:
    verdicts: tuple[ViewVerdict, ...]
    stray: tuple[Detection, ...]

    def __iter__(self):
        return iter(self.verdicts)

    def __len__(self) -> int:
        return len(self.verdicts)


def associate(
    detections: Sequence[Detection],
    registry: ComponentRegistry,
    camera: CameraId | None = None,
    assoc_iou_threshold: float = DEFAULT_ASSOC_IOU,
    class_states: Mapping[int, FastenerState] = DEFAULT_CLASS_STATES,
) -> Association:
    """Assign one camera's detections to registry components by ROI overlap.

    Each detection goes to the visible component whose ROI overlaps it most
    (ties: lexicographically smallest id). A component receiving several
    detections keeps the most confident and records the rest as superseded.
    Visible components with nothing assigned come back Undetected.
    """
    if not len(registry):
        raise ConfigurationError("empty component registry")
    if not 0.0 < assoc_iou_threshold <= 1.0:
        raise ConfigurationError(f"assoc_iou_threshold must lie in (0, 1], got {assoc_iou_threshold}")
    if camera is None:
        if not detections:
            raise ConfigurationError("camera must be given when there are no detections")
        camera = detections[0].camera
    cams = {d.camera for d in detections}
    if cams - {camera}:
        raise ContractViolation(f"detections from several cameras: {sorted(c.value for c in cams)}")

    visible = sorted(registry.visible(camera), key=lambda c: c.component_id)
    assigned: dict[str, list[int]] = {}
    stray: list[Detection] = []
    for i, det in enumerate(detections):
        best_id, best_iou = None, -1.0
        for comp in visible:
            v = iou(det.bbox, comp.views[camera].roi)
            if v >= assoc_iou_threshold and v > best_iou:
                best_id, best_iou = comp.component_id, v
        if best_id is None:
            stray.append(det)
        else:
            assigned.setdefault(best_id, []).append(i)

    verdicts = []
    for comp in visible:
        idxs = assigned.get(comp.component_id)
        if not idxs:
            verdicts.append(ViewVerdict(comp.component_id, camera, FastenerState.UNDETECTED))
            continue
        # highest confidence first, input order on ties
        ranked = sorted(idxs, key=lambda i: (-detections[i].confidence, i))
        keep = detections[ranked[0]]
        state = class_states.get(keep.class_id)
        if state is None:
            raise ConfigurationError(f"class {keep.class_id} has no fastener state mapping")
        verdicts.append(
            ViewVerdict(comp.component_id, camera, state, keep.confidence, keep,
                        tuple(detections[i] for i in ranked[1:]))
        )
    return Association(tuple(verdicts), tuple(stray))


@dataclass(frozen=True)
class FusedComponent:
    component_id: str
    state: FastenerState
    confidence: float
    cameras: tuple[CameraId, ...] = ()
    observable: bool = True

    @property
    def defective(self) -> bool:
        """Loose, or not seen at all although some live camera should see it."""
        return self.state is FastenerState.LOOSE or (self.state is FastenerState.UNDETECTED and self.observable)


def fuse_component(
    verdicts: Sequence[ViewVerdict],
    policy: Policy | str = Policy.DEFECT_PRIORITY,
) -> tuple[FastenerState, float]:
    policy = Policy.parse(policy)
    cams = [v.camera for v in verdicts]
    if len(set(cams)) != len(cams):
        raise ContractViolation(f"duplicate cameras among verdicts: {[c.value for c in cams]}")
    if len({v.component_id for v in verdicts}) > 1:
        raise ContractViolation("verdicts belong to different components")
    loose = [v.confidence for v in verdicts if v.state is FastenerState.LOOSE]
    fastened = [v.confidence for v in verdicts if v.state is FastenerState.FASTENED]
    if not loose and not fastened:
        return FastenerState.UNDETECTED, 0.0

    if policy is Policy.DEFECT_PRIORITY:
        if loose:
            return FastenerState.LOOSE, max(loose)
        return FastenerState.FASTENED, max(fastened)

    if policy is Policy.MAJORITY_VOTE:
        if len(fastened) > len(loose):
            return FastenerState.FASTENED, max(fastened)
        return FastenerState.LOOSE, max(loose)

    s_loose, s_fast = sum(loose), sum(fastened)
    total = s_loose + s_fast
    if s_fast - s_loose >= CONFIDENCE_MARGIN:
        return FastenerState.FASTENED, s_fast / total
    return FastenerState.LOOSE, (s_loose / total if total > 0 else 0.0)


@dataclass(frozen=True)
class AssemblyVerdict:
    assembly_id: str
    components: tuple[FusedComponent, ...]
    overall: Overall
    contributing_cameras: tuple[CameraId, ...]
    missing_cameras: tuple[CameraId, ...]
    policy: Policy
    stray_count: int = 0

    @property
    def degraded(self) -> bool:
        return bool(self.missing_cameras)

    @property
    def failed(self) -> bool:
        return self.overall in (Overall.FAIL, Overall.DEGRADED_FAIL)

    def to_dict(self) -> dict:
        return {
            "assembly_id": self.assembly_id,
            "overall": self.overall.value,
            "policy": self.policy.value,
            "contributing_cameras": [c.value for c in self.contributing_cameras],
            "missing_cameras": [c.value for c in self.missing_cameras],
            "stray_detections": self.stray_count,
            "components": [
                {
                    "id": c.component_id,
                    "state": c.state.value,
                    "confidence": c.confidence,
                    "cameras": [x.value for x in c.cameras],
                    "defective": c.defective,
                }
                for c in self.components
            ],
        }


def assembly_verdict(
    assembly_id: str,
    view_verdicts: Iterable[ViewVerdict],
    registry: ComponentRegistry,
    policy: Policy | str = Policy.DEFECT_PRIORITY,
    missing: Iterable[CameraId] = (),
    stray_count: int = 0,
) -> AssemblyVerdict:
    """Fuse every registered component and decide the assembly.

    A component with no verdict from a live camera that should see it is
    treated as Undetected there. Undetected components that some live camera
    should see count as defects.
    """
    policy = Policy.parse(policy)
    missing_set = {CameraId.parse(c) for c in missing}
    by_comp: dict[str, dict[CameraId, ViewVerdict]] = {}
    for v in view_verdicts:
        if v.camera in missing_set:
            continue
        slot = by_comp.setdefault(v.component_id, {})
        if v.camera in slot:
            raise ContractViolation(f"two verdicts for {v.component_id!r} from {v.camera.value}")
        slot[v.camera] = v

    fused = []
    for comp in registry.components:
        live = [c for c in comp.visible_cameras() if c not in missing_set]
        got = by_comp.get(comp.component_id, {})
        verdicts = [got.get(c) or ViewVerdict(comp.component_id, c, FastenerState.UNDETECTED) for c in live]
        state, conf = fuse_component(verdicts, policy)
        fused.append(FusedComponent(comp.component_id, state, conf, tuple(live), observable=bool(live)))

    fail = any(c.defective for c in fused)
    if missing_set:
        overall = Overall.DEGRADED_FAIL if fail else Overall.DEGRADED_PASS
    else:
        overall = Overall.FAIL if fail else Overall.PASS
    return AssemblyVerdict(
        assembly_id=assembly_id,
        components=tuple(fused),
        overall=overall,
        contributing_cameras=tuple(c for c in CAMERAS if c not in missing_set),
        missing_cameras=tuple(c for c in CAMERAS if c in missing_set),
        policy=policy,
        stray_count=stray_count,
    )
