"""Per-stage timings and nearest-rank latency summaries."""

from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterable, Iterator

STAGES = ("detect", "associate", "fuse", "log")
DEFAULT_BUDGET_MS = 9.0


@dataclass
class StageTimings:
    """Milliseconds spent per stage for one assembly.

    ``detect`` is the time to obtain detections (file parsing for replay).
    ``end_to_end`` runs from the first camera event to the logged verdict and
    so includes time spent waiting for the other cameras.
    """

    detect: float = 0.0
    associate: float = 0.0
    fuse: float = 0.0
    log: float = 0.0
    end_to_end: float = 0.0

    @property
    def processing(self) -> float:
        """The non-detector path: parse, associate, fuse, log."""
        return self.detect + self.associate + self.fuse + self.log

    def as_dict(self) -> dict[str, float]:
        return {s: getattr(self, s) for s in STAGES} | {"processing": self.processing, "end_to_end": self.end_to_end}


class Stopwatch:
    def __init__(self) -> None:
        self.timings = StageTimings()

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        t0 = time.perf_counter_ns()
        try:
            yield
        finally:
            elapsed = (time.perf_counter_ns() - t0) / 1e6
            setattr(self.timings, name, getattr(self.timings, name) + elapsed)


def nearest_rank(sorted_values: list[float], pct: float) -> float:
    """Smallest value with at least ``pct`` percent of samples at or below it."""
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100.0 * n - 1e-9))
    return sorted_values[min(rank, n) - 1]


@dataclass
class StageSummary:
    p50: float
    p95: float
    max: float
    count: int

    def as_dict(self) -> dict[str, float]:
        return {"p50": self.p50, "p95": self.p95, "max": self.max, "count": self.count}


@dataclass
class LatencySummary:
    stages: dict[str, StageSummary]
    budget_ms: float
    budget_metric: str
    budget_violations: int
    samples: int
    extra: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "samples": self.samples,
            "budget_ms": self.budget_ms,
            "budget_metric": self.budget_metric,
            "budget_violations": self.budget_violations,
            "stages": {k: v.as_dict() for k, v in self.stages.items()},
            **self.extra,
        }


def summarize(values: Iterable[float]) -> StageSummary | None:
    vals = sorted(values)
    if not vals:
        return None
    return StageSummary(nearest_rank(vals, 50), nearest_rank(vals, 95), vals[-1], len(vals))


def latency_report(
    timings: Iterable[StageTimings],
    budget_ms: float = DEFAULT_BUDGET_MS,
    budget_metric: str = "processing",
) -> LatencySummary | None:
    """p50/p95/max per stage; counts samples whose ``budget_metric`` exceeds the budget."""
    timings = list(timings)
    if not timings:
        return None
    rows = [t.as_dict() for t in timings]
    stages = {k: summarize(r[k] for r in rows) for k in rows[0]}
    violations = sum(1 for r in rows if r[budget_metric] > budget_ms)
    return LatencySummary(stages, budget_ms, budget_metric, violations, len(rows))  # type: ignore[arg-type]
