"""Hot loops behind geometry and evaluation.

The compiled extension is used when it was built; otherwise the pure-Python
twin is loaded. Set ``MVQC_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels


def _load_compiled() -> ModuleType | None:
    if os.environ.get("MVQC_PURE_PYTHON", "").strip() not in ("", "0"):
        return None
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
_impl: ModuleType = _compiled if _compiled is not None else _pykernels

BACKEND: str = _impl.NAME

iou_corners = _impl.iou_corners
iou_matrix = _impl.iou_matrix
nms_keep = _impl.nms_keep
greedy_match = _impl.greedy_match
interp_ap = _impl.interp_ap


def available_backends() -> dict[str, ModuleType]:
    """Every importable backend by name, for comparison and benchmarking."""
    out = {_pykernels.NAME: _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out[_ckernels.NAME] = _ckernels
    return out


__all__ = [
    "BACKEND",
    "available_backends",
    "greedy_match",
    "interp_ap",
    "iou_corners",
    "iou_matrix",
    "nms_keep",
]
