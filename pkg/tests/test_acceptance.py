"""Exit criteria. Each test prints one PASS/FAIL line and asserts the same condition."""

import math
import random
import time
from statistics import fmean

import numpy as np
import pytest
from scipy.stats import binom

from conftest import random_box
from oracles import brute_force_ap, greedy_match_flags, greedy_nms_trace, plain_iou, raster_iou
from multiview_qc.dataset import (
    CAMERAS,
    AnnotationRecord,
    CameraId,
    DatasetManifest,
    split_sizes,
    stratified_split,
)
from multiview_qc.evaluation import ImageMatch, average_precision, map_at, match, pr_curve
from multiview_qc.geometry import BBox, iou, nms
from multiview_qc.pipeline import harness
from multiview_qc.pipeline.runner import process_events, replay_producers, run_threaded
from multiview_qc.pipeline.sync import SyncEvent
from multiview_qc.pipeline.verdict_log import VerdictLogWriter, read_verdicts

pytestmark = pytest.mark.acceptance

CAMERA_RECALL = {CameraId.TOP: 0.987, CameraId.MIDDLE: 0.241, CameraId.BOTTOM: 0.658}


def _t(box):
    return (box.cx, box.cy, box.w, box.h)


def _jitter(rng, box, scale):
    b, _ = BBox.clamped(box.cx + rng.normal(0, scale), box.cy + rng.normal(0, scale),
                        box.w * math.exp(rng.normal(0, scale * 4)), box.h * math.exp(rng.normal(0, scale * 4)))
    return b


def test_criterion_1_ap_oracle(verdict_line):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, trials = 0.0, 1000
    for _ in range(trials):
        n_gt = int(rng.integers(1, 13))
        gts = [random_box(rng, 0.05, 0.3) for _ in range(n_gt)]
        dets = []
        for _ in range(int(rng.integers(0, 21))):
            box = _jitter(rng, gts[int(rng.integers(n_gt))], 0.03) if rng.random() < 0.7 else random_box(rng)
            dets.append((box, float(rng.random())))
        thr = float(rng.choice([0.5, 0.75, 0.3]))
        res = match(dets, gts, thr)
        flags = [False] * len(dets)
        for d, _, _ in res.pairs:
            flags[d] = True
        got = average_precision(pr_curve([ImageMatch(tuple(c for _, c in dets), tuple(flags), n_gt)]))
        confs = [c for _, c in dets]
        ref_flags = greedy_match_flags([_t(b) for b, _ in dets], confs, [_t(g) for g in gts], thr, plain_iou)
        ref = brute_force_ap(confs, ref_flags, n_gt)
        worst = max(worst, abs(got - ref))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 10
    verdict_line(1, "AP oracle equivalence", ok, f"{trials} trials, max |diff| {worst:.2e}, {elapsed:.2f}s")
    assert ok


def test_criterion_2_reference_fixture(verdict_line):
    t0 = time.perf_counter()
    records, dets = harness.reference_fixture()
    rep = map_at(dets, records)
    elapsed = time.perf_counter() - t0
    ok = rep.precision == 1.0 and rep.recall == 0.999 and rep.map50 >= 0.995 and elapsed < 5
    verdict_line(2, "reference fixture", ok,
                 f"P {rep.precision:.3f} R {rep.recall:.3f} mAP@50 {rep.map50:.5f} ({elapsed:.2f}s)")
    assert ok


def _binomial_check(missing=()):
    station = harness.make_station(2500, defect_rate=1.0, seed=11)
    dets = harness.detect_station(station, seed=5)
    rates = harness.measure_fusion(station, dets, missing=missing)
    p = 1.0
    for cam, r in CAMERA_RECALL.items():
        if cam not in missing:
            p *= 1 - r
    p = 1 - p
    lo, hi = binom.interval(0.99, rates.n_loose, p)
    return rates, p, lo, hi


def test_criterion_3_fusion_gain(verdict_line):
    t0 = time.perf_counter()
    rates, p, lo, hi = _binomial_check()
    elapsed = time.perf_counter() - t0
    best_view = max(rates.view_rate(c) for c in CAMERAS)
    ok = rates.n_loose == 10_000 and lo <= rates.fused_hits <= hi and rates.fused_rate > best_view and elapsed < 30
    verdict_line(3, "fusion gain", ok,
                 f"fused {rates.fused_hits}/{rates.n_loose} in [{lo:.0f}, {hi:.0f}] around {p:.6f}; "
                 f"best single view {best_view:.4f}; {elapsed:.2f}s")
    assert ok


def _manifest(counts, rng):
    recs = [AnnotationRecord(f"{cam.value}/{rng.getrandbits(48):012x}", cam) for cam, n in counts.items()
            for _ in range(n)]
    rng.shuffle(recs)
    return DatasetManifest(tuple(recs))


def test_criterion_4_split(verdict_line):
    rng = random.Random(600)
    m = _manifest({c: 200 for c in CAMERAS}, rng)
    parts = stratified_split(m, seed=17)
    sizes = [tuple(p.camera_counts()[c.value] for p in parts) for c in CAMERAS]
    exact = all(s == (140, 30, 30) for s in sizes)
    again = stratified_split(DatasetManifest(tuple(reversed(m.records))), seed=17)
    identical = [p.to_json() for p in parts] == [p.to_json() for p in again]
    partition_ok = 0
    for _ in range(100):
        counts = {c: rng.randint(3, 80) for c in CAMERAS}
        fm = _manifest(counts, rng)
        fparts = stratified_split(fm, seed=rng.randint(0, 2**31))
        ids = [r.image_id for p in fparts for r in p.records]
        good = sorted(ids) == sorted(r.image_id for r in fm.records)
        for c in CAMERAS:
            good &= tuple(p.camera_counts()[c.value] for p in fparts) == split_sizes(counts[c], (0.7, 0.15, 0.15))
        partition_ok += good
    ok = exact and identical and partition_ok == 100
    verdict_line(4, "split reproduction", ok,
                 f"per camera {sizes[0]}, byte-identical {identical}, partitions {partition_ok}/100")
    assert ok


def test_criterion_5_geometry_nms(verdict_line):
    rng = np.random.default_rng(5)
    failures = 0
    cases = 10_000
    for _ in range(cases):
        a, b = random_box(rng, 0.01, 0.6), random_box(rng, 0.01, 0.6)
        v = iou(a, b)
        failures += not (v == iou(b, a) and 0.0 <= v <= 1.0 and iou(a, a) == 1.0)
        failures += abs(v - plain_iou(_t(a), _t(b))) > 1e-12
        dets = [(random_box(rng, 0.05, 0.4), float(rng.random()), int(rng.integers(2)))
                for _ in range(int(rng.integers(0, 9)))]
        thr = float(rng.uniform(0.05, 1.0))
        out = nms(dets, thr)
        failures += nms(out, thr) != out
        failures += any(out[i][2] == out[j][2] and iou(out[i][0], out[j][0]) > thr
                        for i in range(len(out)) for j in range(i + 1, len(out)))
        failures += out != [dets[i] for i in greedy_nms_trace(dets, thr, lambda p, q: plain_iou(_t(p), _t(q)))]
    spots = [((0.5, 0.5, 0.4, 0.4), (0.7, 0.5, 0.4, 0.4)), ((0.3, 0.3, 0.2, 0.3), (0.35, 0.4, 0.25, 0.2)),
             ((0.25, 0.5, 0.5, 0.5), (0.75, 0.5, 0.5, 0.5)),
             ((0.412345, 0.587654, 0.3141593, 0.2718282), (0.5123457, 0.5432109, 0.2236068, 0.3162278))]
    spot_err = max(abs(iou(BBox(*a), BBox(*b)) - raster_iou(a, b)) for a, b in spots)
    ok = failures == 0 and spot_err <= 1e-3
    verdict_line(5, "geometry/NMS properties", ok,
                 f"{cases} cases, {failures} violations, raster spot error {spot_err:.1e}")
    assert ok


def test_criterion_6_exactly_once(verdict_line):
    registry = harness.default_registry()
    rng = random.Random(66)
    shuffles, bad = 1000, 0
    for k in range(shuffles):
        drop = k % 2 == 1
        events, dropped = [], {}
        for i in range(50):
            aid = f"A{i:02d}"
            for cam in CAMERAS:
                if drop and rng.random() < 0.1:
                    dropped.setdefault(aid, set()).add(cam)
                else:
                    events.append((cam, aid))
        rng.shuffle(events)
        res = process_events([SyncEvent(c, a, (), float(t)) for t, (c, a) in enumerate(events)], registry,
                             timeout_ms=math.inf)
        ids = [v.assembly_id for v in res.verdicts]
        expected = {a for _, a in events}
        bad += len(ids) != len(set(ids)) or set(ids) != expected
        bad += any(set(v.missing_cameras) != dropped.get(v.assembly_id, set()) for v in res.verdicts)
    ok = bad == 0
    verdict_line(6, "exactly-once synchronization", ok, f"{shuffles} shuffles (half with drops), {bad} violations")
    assert ok


def test_criterion_7_degraded_closed_form(verdict_line):
    rates, p, lo, hi = _binomial_check(missing=(CameraId.MIDDLE,))
    ok = rates.n_loose == 10_000 and lo <= rates.fused_hits <= hi
    verdict_line(7, "degraded-mode closed form", ok,
                 f"Middle withheld: {rates.fused_hits}/{rates.n_loose} in [{lo:.0f}, {hi:.0f}] around {p:.6f}")
    assert ok


def test_criterion_8_throughput(verdict_line, tmp_path):
    station = harness.make_station(2000, defect_rate=0.1, seed=8)
    root = harness.write_station(tmp_path / "st", station, harness.detect_station(station, seed=8))
    with VerdictLogWriter.open(tmp_path / "verdicts.jsonl") as writer:
        res = run_threaded(replay_producers(root / "detections"), station.registry, writer=writer)
    lat = res.latency()
    p95 = lat.stages["processing"].p95
    n = len(read_verdicts(tmp_path / "verdicts.jsonl"))
    ok = n == 2000 and res.throughput >= 100 and p95 < 10
    verdict_line(8, "throughput", ok,
                 f"{n} assemblies at {res.throughput:.0f}/s, processing p95 {p95:.3f} ms "
                 f"(end-to-end p95 {lat.stages['end_to_end'].p95:.1f} ms)")
    assert ok
