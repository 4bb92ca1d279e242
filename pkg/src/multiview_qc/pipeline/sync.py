"""Gather the three camera reports of each assembly into one bundle."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Sequence

from ..dataset import CAMERAS, CameraId

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_MS = 500.0


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class SyncEvent:
    """One camera's report for one assembly.

    ``payload`` is either a sequence of Detection objects or the raw text of
    a detection file; parsing is left to the consumer.
    """

    camera: CameraId
    assembly_id: str
    payload: Any = ()
    t_ms: float = 0.0


@dataclass
class FrameBundle:
    assembly_id: str
    slots: dict[CameraId, Any]
    first_arrival_ms: float
    expected: tuple[CameraId, ...] = CAMERAS
    complete: bool = False
    poisoned: bool = False
    errors: list[str] = field(default_factory=list)
    emitted_ms: float = math.nan

    @property
    def missing(self) -> tuple[CameraId, ...]:
        return tuple(c for c in self.expected if c not in self.slots)

    @property
    def degraded(self) -> bool:
        return bool(self.missing)


class Synchronizer:
    """Exactly-once bundling of per-camera events by assembly id.

    A bundle is emitted as soon as every expected camera has reported, or
    once ``timeout_ms`` has elapsed since its first event. A repeated
    (camera, assembly) event poisons the bundle, which is emitted at once.
    Events for already-emitted assemblies are dropped and counted as late.
    Time only moves through the ``now_ms`` values handed in, so behaviour is
    reproducible.
    """

    def __init__(self, timeout_ms: float = DEFAULT_TIMEOUT_MS, cameras: Sequence[CameraId] = CAMERAS):
        if timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        self.timeout_ms = float(timeout_ms)
        self.cameras = tuple(cameras)
        self._pending: dict[str, FrameBundle] = {}
        self._emitted: set[str] = set()
        self.late_events: list[SyncEvent] = []
        self.protocol_errors: list[str] = []

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    @property
    def emitted_count(self) -> int:
        return len(self._emitted)

    def next_deadline(self) -> float:
        """Earliest pending timeout, ``inf`` when nothing is pending."""
        for b in self._pending.values():
            return b.first_arrival_ms + self.timeout_ms
        return math.inf

    def _emit(self, bundle: FrameBundle, now_ms: float) -> FrameBundle:
        del self._pending[bundle.assembly_id]
        self._emitted.add(bundle.assembly_id)
        bundle.complete = not bundle.missing and not bundle.poisoned
        bundle.emitted_ms = now_ms
        return bundle

    def advance(self, now_ms: float) -> list[FrameBundle]:
        """Emit every bundle whose timeout has expired at ``now_ms``."""
        out = []
        # insertion order is first-arrival order, so deadlines are sorted
        while self._pending:
            bundle = next(iter(self._pending.values()))
            if bundle.first_arrival_ms + self.timeout_ms > now_ms:
                break
            out.append(self._emit(bundle, now_ms))
        return out

    def push(self, event: SyncEvent) -> list[FrameBundle]:
        out = self.advance(event.t_ms)
        aid = event.assembly_id
        if event.camera not in self.cameras:
            msg = f"{aid}: unexpected camera {event.camera}"
            self.protocol_errors.append(msg)
            log.error(msg)
            return out
        if aid in self._emitted:
            self.late_events.append(event)
            log.warning("%s: late event from %s dropped", aid, event.camera.value)
            return out
        bundle = self._pending.get(aid)
        if bundle is None:
            bundle = FrameBundle(aid, {}, event.t_ms, self.cameras)
            self._pending[aid] = bundle
        if event.camera in bundle.slots:
            msg = f"{aid}: duplicate event from {event.camera.value}"
            bundle.poisoned = True
            bundle.errors.append(msg)
            self.protocol_errors.append(msg)
            log.error(msg)
            out.append(self._emit(bundle, event.t_ms))
            return out
        bundle.slots[event.camera] = event.payload
        if len(bundle.slots) == len(self.cameras):
            out.append(self._emit(bundle, event.t_ms))
        return out

    def flush(self, now_ms: float = math.inf) -> list[FrameBundle]:
        """End of input: emit everything still pending."""
        return [self._emit(b, now_ms) for b in list(self._pending.values())]


def synchronize(
    events: Iterable[SyncEvent],
    timeout_ms: float = DEFAULT_TIMEOUT_MS,
    cameras: Sequence[CameraId] = CAMERAS,
) -> Iterator[FrameBundle]:
    sync = Synchronizer(timeout_ms, cameras)
    for ev in events:
        yield from sync.push(ev)
    yield from sync.flush()
