"""Multi-view fastener inspection.

Per-camera detections of screws and bolts are associated with a component
registry, fused across the Top/Middle/Bottom views into assembly pass/fail
verdicts, and scored with COCO-style detection metrics.
"""

from .dataset import CameraId, DatasetManifest, build_manifest, stratified_split
from .evaluation import map_at
from .fusion import ComponentRegistry, Policy, assembly_verdict, associate, fuse_component
from .geometry import BBox, iou, nms
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "BBox",
    "CameraId",
    "ComponentRegistry",
    "DatasetManifest",
    "Policy",
    "assembly_verdict",
    "associate",
    "build_manifest",
    "fuse_component",
    "iou",
    "map_at",
    "nms",
    "stratified_split",
]
