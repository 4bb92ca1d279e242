"""Stream synchronization, timing, verdict logging and run orchestration."""

from .runner import RunConfig, RunError, RunResult, decide, process_events, run, run_batch, run_stream
from .sync import FrameBundle, ProtocolError, SyncEvent, Synchronizer, synchronize
from .timing import LatencySummary, StageTimings, latency_report
from .verdict_log import VerdictLogWriter, read_log, read_verdicts

__all__ = [
    "FrameBundle",
    "LatencySummary",
    "ProtocolError",
    "RunConfig",
    "RunError",
    "RunResult",
    "StageTimings",
    "SyncEvent",
    "Synchronizer",
    "VerdictLogWriter",
    "decide",
    "latency_report",
    "process_events",
    "read_log",
    "read_verdicts",
    "run",
    "run_batch",
    "run_stream",
    "synchronize",
]
