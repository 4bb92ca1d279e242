"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json]

Each kernel runs on the same inputs under both backends; results are checked
for equality before timings are reported.
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from multiview_qc.kernels import available_backends


def _corners(rng, n):
    c = rng.uniform(0.1, 0.9, size=(n, 2))
    s = rng.uniform(0.02, 0.2, size=(n, 2))
    return np.hstack([c - s / 2, c + s / 2])


def workloads(seed: int = 0):
    rng = np.random.default_rng(seed)
    a, b = _corners(rng, 300), _corners(rng, 200)
    boxes = _corners(rng, 500)
    scores = rng.random(500)
    classes = rng.integers(0, 2, 500)
    ious = rng.random((400, 60))
    order = np.argsort(-rng.random(400), kind="stable")
    tp = np.cumsum(rng.random(5000) < 0.7)
    rec, prec = tp / tp[-1], tp / np.arange(1, 5001)
    return {
        "iou_matrix 300x200": lambda k: k.iou_matrix(a, b),
        "nms_keep 500 boxes": lambda k: k.nms_keep(boxes, scores, classes, 0.5),
        "greedy_match 400x60": lambda k: k.greedy_match(ious, order, 0.5),
        "interp_ap 5000 ranks": lambda k: k.interp_ap(rec, prec),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()

    backends = available_backends()
    rows = []
    for name, fn in workloads().items():
        outs = {b: fn(k) for b, k in backends.items()}
        ref = outs["python"]
        for b, out in outs.items():
            if not np.array_equal(np.asarray(out), np.asarray(ref)):
                raise SystemExit(f"{name}: {b} disagrees with python")
        times = {}
        for b, k in backends.items():
            n, _ = timeit.Timer(lambda: fn(k)).autorange()
            best = min(timeit.repeat(lambda: fn(k), number=n, repeat=args.repeat)) / n
            times[b] = best * 1e3
        rows.append({"kernel": name, **{f"{b}_ms": t for b, t in times.items()}})

    if args.json:
        print(json.dumps(rows, indent=2))
        return
    names = list(backends)
    print(f"{'kernel':<22}" + "".join(f"{b + ' ms':>14}" for b in names) + f"{'speedup':>10}")
    for r in rows:
        line = f"{r['kernel']:<22}" + "".join(f"{r[b + '_ms']:>14.4f}" for b in names)
        if "cython" in backends:
            line += f"{r['python_ms'] / r['cython_ms']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
