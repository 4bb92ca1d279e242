import sys
from pathlib import Path

import pytest
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from multiview_qc.geometry import BBox  # noqa: E402


@st.composite
def boxes(draw, min_size=0.01, max_size=0.6):
    w = draw(st.floats(min_size, max_size))
    h = draw(st.floats(min_size, max_size))
    cx = draw(st.floats(w / 2, 1 - w / 2))
    cy = draw(st.floats(h / 2, 1 - h / 2))
    return BBox(cx, cy, w, h)


def random_box(rng, lo=0.02, hi=0.4):
    w, h = rng.uniform(lo, hi, size=2)
    return BBox(float(rng.uniform(w / 2, 1 - w / 2)), float(rng.uniform(h / 2, 1 - h / 2)), float(w), float(h))


@pytest.fixture
def station_dir(tmp_path):
    from multiview_qc.pipeline import harness

    station = harness.make_station(40, defect_rate=0.2, seed=3)
    dets = harness.detect_station(station, seed=1)
    return harness.write_station(tmp_path / "station", station, dets)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict_line(capsys):
    """Print and remember one ``PASS``/``FAIL`` line for an acceptance criterion."""

    def emit(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} :: {detail}"
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
