import pytest

from multiview_qc.pipeline.timing import StageTimings, Stopwatch, latency_report, nearest_rank, summarize


def test_single_sample():
    s = summarize([4.0])
    assert (s.p50, s.p95, s.max) == (4.0, 4.0, 4.0)


def test_one_to_hundred_nearest_rank():
    s = summarize(float(i) for i in range(1, 101))
    assert s.p95 == 95.0 and s.p50 == 50.0 and s.max == 100.0


def test_nearest_rank_small():
    assert nearest_rank([1.0, 2.0, 3.0], 95) == 3.0
    assert nearest_rank([1.0, 2.0], 50) == 1.0


def test_empty_is_absent():
    assert summarize([]) is None
    assert latency_report([]) is None


def test_report_budget_and_stages():
    ts = [StageTimings(detect=1, associate=2, fuse=3, log=1, end_to_end=9), StageTimings(detect=4, end_to_end=4)]
    rep = latency_report(ts, budget_ms=5.0)
    assert rep.stages["processing"].max == 7
    assert rep.budget_violations == 1 and rep.samples == 2
    assert set(rep.as_dict()["stages"]) == {"detect", "associate", "fuse", "log", "processing", "end_to_end"}


def test_stopwatch_accumulates():
    w = Stopwatch()
    with w.stage("fuse"):
        sum(range(1000))
    with w.stage("fuse"):
        pass
    assert w.timings.fuse >= 0 and w.timings.detect == 0
    with pytest.raises(ZeroDivisionError):
        with w.stage("log"):
            1 / 0
    assert w.timings.log >= 0
