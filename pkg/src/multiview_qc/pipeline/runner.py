"""Batch and streaming execution: detections in, verdict log and reports out."""

from __future__ import annotations

import json
import logging
import math
import queue
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

from ..dataset import CAMERAS, CameraId, DatasetManifest, build_manifest
from ..detector import (
    Detection,
    DetectorBackend,
    DetectorProfile,
    ReplayBackend,
    SyntheticBackend,
    parse_detection_file,
    preset_profiles,
)
from ..evaluation import EvalReport, map_at
from ..fusion import (
    DEFAULT_ASSOC_IOU,
    AssemblyVerdict,
    ComponentRegistry,
    Policy,
    ViewVerdict,
    assembly_verdict,
    associate,
)
from ..geometry import BBox
from .sync import DEFAULT_TIMEOUT_MS, FrameBundle, SyncEvent, Synchronizer
from .timing import DEFAULT_BUDGET_MS, LatencySummary, StageTimings, Stopwatch, latency_report
from .verdict_log import VerdictLogWriter

log = logging.getLogger(__name__)


class RunError(RuntimeError):
    """Bad configuration or unreadable inputs; maps to a nonzero exit."""


def _now_ms() -> float:
    return time.monotonic_ns() / 1e6


def _to_detections(payload: Any, camera: CameraId, assembly_id: str) -> list[Detection]:
    if isinstance(payload, str):
        return parse_detection_file(payload, camera, f"{camera.value}/{assembly_id}")
    return list(payload)


def decide(
    assembly_id: str,
    per_camera: Mapping[CameraId, Any],
    registry: ComponentRegistry,
    policy: Policy | str = Policy.DEFECT_PRIORITY,
    assoc_iou: float = DEFAULT_ASSOC_IOU,
    expected: Sequence[CameraId] = CAMERAS,
    watch: Stopwatch | None = None,
) -> AssemblyVerdict:
    """One assembly through parse, associate and fuse.

    ``per_camera`` holds detections (or raw detection-file text) for every
    camera that reported; expected cameras absent from it count as missing.
    """
    watch = watch or Stopwatch()
    with watch.stage("detect"):
        dets = {cam: _to_detections(p, cam, assembly_id) for cam, p in per_camera.items()}
    verdicts: list[ViewVerdict] = []
    stray = 0
    with watch.stage("associate"):
        for cam, d in dets.items():
            res = associate(d, registry, cam, assoc_iou)
            verdicts.extend(res.verdicts)
            stray += len(res.stray)
    with watch.stage("fuse"):
        missing = [c for c in expected if c not in per_camera]
        return assembly_verdict(assembly_id, verdicts, registry, policy, missing, stray)


@dataclass
class RunResult:
    verdicts: list[AssemblyVerdict] = field(default_factory=list)
    timings: list[StageTimings] = field(default_factory=list)
    protocol_errors: list[str] = field(default_factory=list)
    late_events: int = 0
    wall_seconds: float = 0.0
    report: EvalReport | None = None
    camera_reports: dict[str, EvalReport] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 1 if self.protocol_errors else 0

    @property
    def throughput(self) -> float:
        return len(self.verdicts) / self.wall_seconds if self.wall_seconds > 0 else math.inf

    def latency(self, budget_ms: float = DEFAULT_BUDGET_MS) -> LatencySummary | None:
        return latency_report(self.timings, budget_ms)


class StreamProcessor:
    """Single ordered consumer: bundles in, verdicts logged with timings."""

    def __init__(
        self,
        registry: ComponentRegistry,
        policy: Policy | str = Policy.DEFECT_PRIORITY,
        assoc_iou: float = DEFAULT_ASSOC_IOU,
        writer: VerdictLogWriter | None = None,
        clock: Callable[[], float] | None = None,
    ):
        self.registry = registry
        self.policy = Policy.parse(policy)
        self.assoc_iou = assoc_iou
        self.writer = writer
        self.clock = clock
        self.result = RunResult()

    def handle(self, bundles: Iterable[FrameBundle]) -> None:
        for b in bundles:
            if b.poisoned:
                self.result.protocol_errors.extend(b.errors)
                if self.writer is not None:
                    self.writer.write_error(b.assembly_id, b.errors)
                continue
            watch = Stopwatch()
            verdict = decide(b.assembly_id, b.slots, self.registry, self.policy, self.assoc_iou, b.expected, watch)
            with watch.stage("log"):
                if self.writer is not None:
                    self.writer.write(verdict)
            t = watch.timings
            t.end_to_end = t.processing
            if self.clock is not None:
                t.end_to_end = max(t.processing, self.clock() - b.first_arrival_ms)
            self.result.verdicts.append(verdict)
            self.result.timings.append(t)


def process_events(
    events: Iterable[SyncEvent],
    registry: ComponentRegistry,
    policy: Policy | str = Policy.DEFECT_PRIORITY,
    timeout_ms: float = DEFAULT_TIMEOUT_MS,
    assoc_iou: float = DEFAULT_ASSOC_IOU,
    writer: VerdictLogWriter | None = None,
    cameras: Sequence[CameraId] = CAMERAS,
) -> RunResult:
    """Deterministic single-threaded stream run over time-stamped events."""
    sync = Synchronizer(timeout_ms, cameras)
    proc = StreamProcessor(registry, policy, assoc_iou, writer)
    t0 = time.perf_counter()
    for ev in events:
        proc.handle(sync.push(ev))
    proc.handle(sync.flush())
    res = proc.result
    res.wall_seconds = time.perf_counter() - t0
    res.protocol_errors = list(sync.protocol_errors)
    res.late_events = len(sync.late_events)
    return res


# -- replay sources ---------------------------------------------------------


def replay_assembly_ids(detections_dir: str | Path) -> list[str]:
    root = Path(detections_dir)
    ids: set[str] = set()
    for cam in CAMERAS:
        d = root / cam.value
        if d.is_dir():
            ids.update(p.stem for p in d.glob("*.txt"))
    return sorted(ids)


def replay_camera(detections_dir: str | Path, camera: CameraId) -> Iterator[tuple[str, str]]:
    """``(assembly_id, raw text)`` for one camera, in assembly order."""
    d = Path(detections_dir) / camera.value
    if not d.is_dir():
        return
    for p in sorted(d.glob("*.txt")):
        yield p.stem, p.read_text(encoding="utf-8")


def replay_events(detections_dir: str | Path, step_ms: float = 0.0) -> list[SyncEvent]:
    """All replay files as events, camera streams interleaved round-robin."""
    streams = [[(cam, aid, text) for aid, text in replay_camera(detections_dir, cam)] for cam in CAMERAS]
    events = []
    t = 0.0
    for i in range(max((len(s) for s in streams), default=0)):
        for s in streams:
            if i < len(s):
                cam, aid, text = s[i]
                events.append(SyncEvent(cam, aid, text, t))
                t += step_ms
    return events


_END = object()


def run_threaded(
    producers: Sequence[Callable[[Callable[[SyncEvent], None]], None]],
    registry: ComponentRegistry,
    policy: Policy | str = Policy.DEFECT_PRIORITY,
    timeout_ms: float = DEFAULT_TIMEOUT_MS,
    assoc_iou: float = DEFAULT_ASSOC_IOU,
    writer: VerdictLogWriter | None = None,
    cameras: Sequence[CameraId] = CAMERAS,
) -> RunResult:
    """Producers run in their own threads and hand events over a queue.

    Each producer is called with an ``emit(event)`` callback; its events are
    re-stamped with the arrival clock. The synchronizer and everything after
    it run in the calling thread only.
    """
    q: queue.Queue = queue.Queue()

    def emit(ev: SyncEvent) -> None:
        q.put(SyncEvent(ev.camera, ev.assembly_id, ev.payload, _now_ms()))

    def wrap(fn: Callable) -> Callable[[], None]:
        def target() -> None:
            try:
                fn(emit)
            except Exception:
                log.exception("producer failed")
            finally:
                q.put(_END)

        return target

    sync = Synchronizer(timeout_ms, cameras)
    proc = StreamProcessor(registry, policy, assoc_iou, writer, clock=_now_ms)
    threads = [threading.Thread(target=wrap(p), daemon=True) for p in producers]
    t0 = time.perf_counter()
    for th in threads:
        th.start()
    done = 0
    while done < len(threads):
        wait = sync.next_deadline() - _now_ms()
        try:
            item = q.get(timeout=None if math.isinf(wait) else max(wait, 0.0) / 1000.0)
        except queue.Empty:
            proc.handle(sync.advance(_now_ms()))
            continue
        if item is _END:
            done += 1
            continue
        proc.handle(sync.push(item))
    proc.handle(sync.advance(_now_ms()))
    proc.handle(sync.flush(_now_ms()))
    for th in threads:
        th.join()
    res = proc.result
    res.wall_seconds = time.perf_counter() - t0
    res.protocol_errors = list(sync.protocol_errors)
    res.late_events = len(sync.late_events)
    return res


def replay_producers(detections_dir: str | Path, rate: float | None = None) -> list[Callable]:
    """One producer per camera reading its replay files, optionally paced at ``rate`` assemblies/s."""

    def make(cam: CameraId) -> Callable:
        def produce(emit: Callable[[SyncEvent], None]) -> None:
            start = time.perf_counter()
            for i, (aid, text) in enumerate(replay_camera(detections_dir, cam)):
                if rate:
                    delay = start + i / rate - time.perf_counter()
                    if delay > 0:
                        time.sleep(delay)
                emit(SyncEvent(cam, aid, text))

        return produce

    return [make(cam) for cam in CAMERAS]


# -- line-delimited JSON socket source ---------------------------------------


def parse_event_line(line: str) -> SyncEvent:
    """``{"camera", "assembly_id", "detections"}``; detections as file text or 6-field rows."""
    doc = json.loads(line)
    cam = CameraId.parse(doc["camera"])
    aid = str(doc["assembly_id"])
    raw = doc.get("detections", [])
    if isinstance(raw, str):
        payload: Any = raw
    else:
        image_id = f"{cam.value}/{aid}"
        payload = [
            Detection(BBox.clamped(float(cx), float(cy), float(w), float(h))[0], int(c), float(conf), cam, image_id)
            for c, cx, cy, w, h, conf in raw
        ]
    return SyncEvent(cam, aid, payload, float(doc.get("t_ms", 0.0)))


def event_line(event: SyncEvent) -> str:
    payload = event.payload
    if not isinstance(payload, str):
        payload = [[d.class_id, d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h, d.confidence] for d in payload]
    return json.dumps({"camera": event.camera.value, "assembly_id": event.assembly_id, "detections": payload})


def socket_producers(host: str, port: int, n_connections: int = 3) -> tuple[list[Callable], socket.socket]:
    """Listen on ``host:port``; each accepted connection becomes one producer.

    Returns the producers and the bound listening socket (port 0 picks a free
    port; read it back with ``getsockname``).
    """
    srv = socket.create_server((host, port))
    srv.listen(n_connections)
    lock = threading.Lock()

    def produce(emit: Callable[[SyncEvent], None]) -> None:
        with lock:
            conn, _ = srv.accept()
        with conn, conn.makefile("r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    try:
                        emit(parse_event_line(line))
                    except (ValueError, KeyError, TypeError) as exc:
                        log.error("bad event line %r: %s", line[:80], exc)

    return [produce] * n_connections, srv


# -- top-level run -----------------------------------------------------------


@dataclass
class RunConfig:
    mode: str = "stream"
    detections: Path | None = None
    dataset_root: Path | None = None
    registry: Path | None = None
    policy: str = Policy.DEFECT_PRIORITY.value
    out_dir: Path = Path("out")
    timeout_ms: float = DEFAULT_TIMEOUT_MS
    assoc_iou: float = DEFAULT_ASSOC_IOU
    budget_ms: float = DEFAULT_BUDGET_MS
    workers: int = 1
    backend: str = "replay"
    profiles_dir: Path | None = None
    seed: int = 0
    listen: str | None = None
    connections: int = 3
    rate: float | None = None
    threaded: bool = True

    @classmethod
    def from_mapping(cls, m: Mapping[str, Any]) -> RunConfig:
        names = set(cls.__dataclass_fields__)
        unknown = set(m) - names
        if unknown:
            raise RunError(f"unknown config keys {sorted(unknown)}")
        kw = dict(m)
        for k in ("detections", "dataset_root", "registry", "out_dir", "profiles_dir"):
            if kw.get(k) is not None:
                kw[k] = Path(kw[k])
        return cls(**kw)


def load_registry(cfg: RunConfig) -> ComponentRegistry:
    path = cfg.registry
    if path is None and cfg.dataset_root is not None:
        path = cfg.dataset_root / "registry.json"
    if path is None or not path.is_file():
        raise RunError(f"registry file not found: {path}")
    try:
        return ComponentRegistry.load(path)
    except (ValueError, KeyError) as exc:
        raise RunError(f"{path}: {exc}") from exc


def load_profiles(profiles_dir: Path | None) -> dict[CameraId, DetectorProfile]:
    if profiles_dir is None:
        return preset_profiles()
    return {cam: DetectorProfile.load(profiles_dir / f"{cam.value}.json") for cam in CAMERAS}


def _detections_dir(cfg: RunConfig) -> Path:
    d = cfg.detections or (cfg.dataset_root / "detections" if cfg.dataset_root else None)
    if d is None or not d.is_dir():
        raise RunError(f"detections directory not found: {d}")
    return d


def make_backend(cfg: RunConfig, manifest: DatasetManifest | None) -> DetectorBackend:
    if cfg.backend == "replay":
        return ReplayBackend(_detections_dir(cfg))
    if cfg.backend == "synthetic":
        if manifest is None:
            raise RunError("synthetic backend needs --root with ground-truth labels")
        return SyntheticBackend(manifest, load_profiles(cfg.profiles_dir), cfg.seed)
    raise RunError(f"unknown backend {cfg.backend!r}")


def run_batch(cfg: RunConfig, writer: VerdictLogWriter | None = None) -> RunResult:
    """Every assembly at once, optionally in parallel; output sorted by assembly id."""
    registry = load_registry(cfg)
    manifest = build_manifest(cfg.dataset_root) if cfg.dataset_root is not None else None
    backend = make_backend(cfg, manifest)
    if manifest is not None:
        ids = sorted({r.image_id.split("/", 1)[1] for r in manifest.records})
    else:
        ids = replay_assembly_ids(_detections_dir(cfg))

    def one(aid: str) -> tuple[AssemblyVerdict, StageTimings, dict[CameraId, list[Detection]]]:
        watch = Stopwatch()
        per_cam: dict[CameraId, list[Detection]] = {}
        with watch.stage("detect"):
            for cam in CAMERAS:
                try:
                    per_cam[cam] = backend.detect(f"{cam.value}/{aid}", cam)
                except KeyError:
                    pass
        verdict = decide(aid, per_cam, registry, cfg.policy, cfg.assoc_iou, CAMERAS, watch)
        return verdict, watch.timings, per_cam

    t0 = time.perf_counter()
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            outcomes = list(pool.map(one, ids))
    else:
        outcomes = [one(aid) for aid in ids]
    res = RunResult()
    for verdict, timings, _ in outcomes:
        if writer is not None:
            t = time.perf_counter_ns()
            writer.write(verdict)
            timings.log = (time.perf_counter_ns() - t) / 1e6
        timings.end_to_end = timings.processing
        res.verdicts.append(verdict)
        res.timings.append(timings)
    res.wall_seconds = time.perf_counter() - t0

    if manifest is not None:
        all_dets = [d for _, _, per_cam in outcomes for ds in per_cam.values() for d in ds]
        res.report = map_at(all_dets, manifest, class_names=manifest.class_names)
        for cam in CAMERAS:
            recs = manifest.by_camera(cam)
            if recs:
                res.camera_reports[cam.value] = map_at(
                    [d for d in all_dets if d.camera is cam], recs, class_names=manifest.class_names
                )
    return res


def run_stream(cfg: RunConfig, writer: VerdictLogWriter | None = None) -> RunResult:
    registry = load_registry(cfg)
    if cfg.listen:
        host, _, port = cfg.listen.rpartition(":")
        producers, srv = socket_producers(host or "127.0.0.1", int(port), cfg.connections)
        log.info("listening on %s:%d", *srv.getsockname()[:2])
        try:
            return run_threaded(producers, registry, cfg.policy, cfg.timeout_ms, cfg.assoc_iou, writer)
        finally:
            srv.close()
    det_dir = _detections_dir(cfg)
    if cfg.threaded:
        return run_threaded(replay_producers(det_dir, cfg.rate), registry, cfg.policy, cfg.timeout_ms,
                            cfg.assoc_iou, writer)
    return process_events(replay_events(det_dir), registry, cfg.policy, cfg.timeout_ms, cfg.assoc_iou, writer)


def run(cfg: RunConfig) -> RunResult:
    """Execute a configured run and write its artifacts to ``cfg.out_dir``."""
    if cfg.mode not in ("batch", "stream"):
        raise RunError(f"unknown mode {cfg.mode!r}")
    Policy.parse(cfg.policy)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    header = {"mode": cfg.mode, "policy": Policy.parse(cfg.policy).value}
    with VerdictLogWriter.open(cfg.out_dir / "verdicts.jsonl", **header) as writer:
        res = run_batch(cfg, writer) if cfg.mode == "batch" else run_stream(cfg, writer)
    summary = res.latency(cfg.budget_ms)
    lat = summary.as_dict() if summary else {"samples": 0}
    lat.update({"throughput_per_s": res.throughput if res.verdicts else 0.0, "verdicts": len(res.verdicts),
                "protocol_errors": res.protocol_errors, "late_events": res.late_events})
    (cfg.out_dir / "latency.json").write_text(json.dumps(lat, indent=2) + "\n", encoding="utf-8")
    if res.report is not None:
        (cfg.out_dir / "eval.json").write_text(
            json.dumps({"all": res.report.to_dict(), **{k: v.to_dict() for k, v in res.camera_reports.items()}},
                       indent=2) + "\n", encoding="utf-8")
        (cfg.out_dir / "eval.csv").write_text(res.report.to_csv(), encoding="utf-8")
    return res
