import math
import random

import pytest

from multiview_qc.dataset import CAMERAS, CameraId
from multiview_qc.pipeline.sync import SyncEvent, Synchronizer, synchronize

TOP, MID, BOT = CAMERAS


def ev(cam, aid, t=0.0):
    return SyncEvent(cam, aid, (), t)


def test_three_events_any_order_one_complete_bundle():
    for order in ([TOP, MID, BOT], [BOT, TOP, MID], [MID, BOT, TOP]):
        (b,) = list(synchronize([ev(c, "A1") for c in order]))
        assert b.complete and not b.degraded and set(b.slots) == set(CAMERAS)


def test_timeout_gives_degraded_bundle():
    sync = Synchronizer(timeout_ms=100)
    assert sync.push(ev(TOP, "A2", 0)) == []
    assert sync.push(ev(BOT, "A2", 50)) == []
    assert sync.next_deadline() == 100
    (b,) = sync.advance(100)
    assert b.missing == (MID,) and b.degraded and not b.complete
    assert sync.push(ev(MID, "A2", 120)) == []
    assert len(sync.late_events) == 1


def test_timeout_fires_on_later_push():
    sync = Synchronizer(timeout_ms=10)
    sync.push(ev(TOP, "A", 0))
    out = sync.push(ev(TOP, "B", 25))
    assert [b.assembly_id for b in out] == ["A"] and out[0].emitted_ms == 25


def test_duplicate_event_poisons_bundle():
    sync = Synchronizer()
    sync.push(ev(TOP, "A", 0))
    (b,) = sync.push(ev(TOP, "A", 1))
    assert b.poisoned and not b.complete and sync.protocol_errors
    assert sync.push(ev(MID, "A", 2)) == []


def test_bad_timeout():
    with pytest.raises(ValueError):
        Synchronizer(0)


def _fuzz(rng, n_assemblies=50, drop_rate=0.0, timeout_ms=math.inf):
    events, dropped = [], {}
    for i in range(n_assemblies):
        aid = f"A{i:03d}"
        for cam in CAMERAS:
            if rng.random() < drop_rate:
                dropped.setdefault(aid, set()).add(cam)
            else:
                events.append((cam, aid))
    rng.shuffle(events)
    stamped = [ev(c, a, float(k)) for k, (c, a) in enumerate(events)]
    return stamped, dropped


@pytest.mark.parametrize("drop_rate, timeout", [(0.0, math.inf), (0.1, math.inf), (0.1, 20.0), (0.0, 5.0)])
def test_exactly_once_under_permutation(drop_rate, timeout):
    rng = random.Random(1234)
    for _ in range(50):
        events, dropped = _fuzz(rng, 50, drop_rate)
        sync = Synchronizer(timeout)
        bundles = [b for e in events for b in sync.push(e)] + sync.flush()
        ids = [b.assembly_id for b in bundles]
        assert len(ids) == len(set(ids)) == len({e.assembly_id for e in events})
        late = {}
        for e in sync.late_events:
            late.setdefault(e.assembly_id, set()).add(e.camera)
        for b in bundles:
            got, lost, gone = set(b.slots), late.get(b.assembly_id, set()), dropped.get(b.assembly_id, set())
            assert got | lost | gone == set(CAMERAS)
            assert not (got & lost) and not (got & gone)
            assert b.degraded == bool(lost | gone)
            if math.isinf(timeout):
                assert not lost
