"""``mvqc`` command line: validate, split, eval, simulate, run, report.

Options resolve as command-line flag, then ``--config`` JSON file (flat keys
or a section named after the subcommand), then built-in default. Log
verbosity comes from ``MVQC_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path
from typing import Any, Sequence

from .dataset import CAMERAS, DatasetError, DatasetManifest, build_manifest, stratified_split, validate
from .detector import ReplayBackend, preset_profiles
from .evaluation import map_at
from .fusion import FusionError, Policy
from .pipeline import harness
from .pipeline.runner import RunConfig, RunError, load_profiles, run
from .pipeline.verdict_log import VerdictLogError, read_log

log = logging.getLogger("multiview_qc")

DEFAULTS: dict[str, dict[str, Any]] = {
    "validate": {},
    "split": {"seed": 0, "ratios": [0.70, 0.15, 0.15]},
    "eval": {},
    "simulate": {"scenario": "station", "assemblies": 100, "components": 4, "defect_rate": 0.1, "seed": 0},
    "run": {
        "mode": "stream", "policy": Policy.DEFECT_PRIORITY.value, "out": "out", "timeout_ms": 500.0,
        "assoc_iou": 0.3, "budget_ms": 9.0, "workers": 1, "backend": "replay", "seed": 0, "connections": 3,
    },
    "report": {},
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvqc", description="Multi-view fastener inspection tools.")
    p.add_argument("--config", type=Path, help="JSON config file (flags override it)")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a dataset root and print a report")
    v.add_argument("--root", type=Path)
    v.add_argument("--json", action="store_true", help="print the full report as JSON")

    s = sub.add_parser("split", help="70/15/15 per-camera split into manifest files")
    s.add_argument("--root", type=Path)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", type=Path)
    s.add_argument("--ratios", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))

    e = sub.add_parser("eval", help="score detection files against labels")
    e.add_argument("--root", type=Path, help="dataset root with images/ and labels/")
    e.add_argument("--detections", type=Path, help="detection root (default ROOT/detections)")
    e.add_argument("--manifest", type=Path, help="restrict to the records of a manifest file")
    e.add_argument("--out", type=Path, help="write eval.json and eval.csv here")
    e.add_argument("--table", action="store_true", help="print a Precision/Recall/mAP summary table")
    e.add_argument("--per-camera", action="store_true", help="add one table row per camera")

    sim = sub.add_parser("simulate", help="write a synthetic three-camera dataset with detections")
    sim.add_argument("--out", type=Path)
    sim.add_argument("--scenario", choices=["station", "reference"])
    sim.add_argument("--assemblies", type=int)
    sim.add_argument("--components", type=int)
    sim.add_argument("--defect-rate", type=float, dest="defect_rate")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--profiles", type=Path, help="directory with top/middle/bottom.json profiles")

    r = sub.add_parser("run", help="produce assembly verdicts (stream or batch)")
    r.add_argument("--mode", choices=["stream", "batch"])
    r.add_argument("--root", type=Path, help="dataset root (batch: also evaluates)")
    r.add_argument("--detections", type=Path)
    r.add_argument("--registry", type=Path)
    r.add_argument("--policy", choices=[p.value for p in Policy])
    r.add_argument("--out", type=Path)
    r.add_argument("--timeout-ms", type=float, dest="timeout_ms")
    r.add_argument("--assoc-iou", type=float, dest="assoc_iou")
    r.add_argument("--budget-ms", type=float, dest="budget_ms")
    r.add_argument("--workers", type=int)
    r.add_argument("--backend", choices=["replay", "synthetic"])
    r.add_argument("--profiles", type=Path)
    r.add_argument("--seed", type=int)
    r.add_argument("--listen", help="HOST:PORT for line-delimited JSON events")
    r.add_argument("--connections", type=int, help="producer connections to accept with --listen")
    r.add_argument("--rate", type=float, help="pace replay at this many assemblies per second")

    rep = sub.add_parser("report", help="summarize a verdict log and its companions")
    rep.add_argument("--log", type=Path)
    rep.add_argument("--latency", type=Path)
    rep.add_argument("--eval", type=Path)
    return p


def _resolve(args: argparse.Namespace) -> dict[str, Any]:
    cfg_file: dict[str, Any] = {}
    if args.config is not None:
        doc = json.loads(args.config.read_text(encoding="utf-8"))
        cfg_file = {k: v for k, v in doc.items() if not isinstance(v, dict)}
        cfg_file.update(doc.get(args.command, {}))
    out = dict(DEFAULTS[args.command])
    for k, v in cfg_file.items():
        out[k.replace("-", "_")] = v
    for k, v in vars(args).items():
        if k in ("config", "command"):
            continue
        if v is not None and v is not False:
            out[k] = v
        else:
            out.setdefault(k, v)
    return out


def _require(opts: dict[str, Any], *keys: str) -> None:
    for k in keys:
        if opts.get(k) is None:
            raise RunError(f"--{k.replace('_', '-')} is required")


def _path(v: Any) -> Path | None:
    return None if v is None else Path(v)


def cmd_validate(o: dict[str, Any]) -> int:
    _require(o, "root")
    manifest = build_manifest(_path(o["root"]))
    report = validate(manifest, _path(o["root"]))
    if o.get("json"):
        print(json.dumps(report.to_dict(), indent=2))
    else:
        counts = report.camera_counts
        print(f"records: {len(manifest)}  " + "  ".join(f"{k}={v}" for k, v in counts.items()))
        print("empty labels: " + "  ".join(f"{k}={v}" for k, v in report.empty_label_counts.items()))
        for cam, hist in report.class_histograms.items():
            print(f"{cam:<7} " + "  ".join(f"{k}={v}" for k, v in hist.items()))
        for w in manifest.warnings:
            print(f"warning: {w}")
        for issue in report.issues:
            print(f"{issue.kind}: {issue.image_id} {issue.detail}".rstrip())
        print("OK" if report.ok else f"{len(report.issues)} issue(s)")
    return 0 if report.ok else 1


def cmd_split(o: dict[str, Any]) -> int:
    _require(o, "root", "out")
    manifest = build_manifest(_path(o["root"]))
    parts = stratified_split(manifest, tuple(o["ratios"]), int(o["seed"]))
    out = _path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    for m in parts:
        m.save(out / f"{m.split_tag}.json")
        counts = "/".join(str(n) for n in m.camera_counts().values())
        print(f"{m.split_tag:<5} {len(m):>5}  (top/middle/bottom {counts})")
    return 0


def cmd_eval(o: dict[str, Any]) -> int:
    _require(o, "root")
    root = _path(o["root"])
    manifest = DatasetManifest.load(o["manifest"]) if o.get("manifest") else build_manifest(root)
    backend = ReplayBackend(_path(o.get("detections")) or root / "detections")
    dets = []
    for rec in manifest.records:
        try:
            dets.extend(backend.detect(rec.image_id, rec.camera))
        except KeyError:
            log.warning("%s: no detection file, counted as no detections", rec.image_id)
    report = map_at(dets, manifest, class_names=manifest.class_names)
    rows = [("all", report)]
    if o.get("per_camera"):
        for cam in CAMERAS:
            recs = manifest.by_camera(cam)
            if recs:
                rows.append((cam.value, map_at([d for d in dets if d.camera is cam], recs,
                                               class_names=manifest.class_names)))
    if o.get("out"):
        out = _path(o["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps({k: r.to_dict() for k, r in rows}, indent=2) + "\n",
                                       encoding="utf-8")
        (out / "eval.csv").write_text(report.to_csv(), encoding="utf-8")
    if o.get("table") or not o.get("out"):
        lines = [r.render_table(k).splitlines() for k, r in rows]
        print("\n".join([lines[0][0]] + [ln[1] for ln in lines]))
    return 0


def cmd_simulate(o: dict[str, Any]) -> int:
    _require(o, "out")
    out = _path(o["out"])
    if o["scenario"] == "reference":
        harness.write_reference_fixture(out, seed=int(o["seed"]))
        print(f"wrote reference fixture to {out}")
        return 0
    registry = harness.default_registry(int(o["components"]))
    station = harness.make_station(int(o["assemblies"]), registry, float(o["defect_rate"]), int(o["seed"]))
    profiles = preset_profiles()
    if o.get("profiles"):
        profiles = load_profiles(_path(o["profiles"]))
    dets = harness.detect_station(station, profiles, int(o["seed"]))
    harness.write_station(out, station, dets)
    print(f"wrote {o['assemblies']} assemblies x {len(registry)} components to {out}")
    return 0


def cmd_run(o: dict[str, Any]) -> int:
    cfg = RunConfig(
        mode=o["mode"], detections=_path(o.get("detections")), dataset_root=_path(o.get("root")),
        registry=_path(o.get("registry")), policy=o["policy"], out_dir=_path(o["out"]),
        timeout_ms=float(o["timeout_ms"]), assoc_iou=float(o["assoc_iou"]), budget_ms=float(o["budget_ms"]),
        workers=int(o["workers"]), backend=o["backend"], profiles_dir=_path(o.get("profiles")),
        seed=int(o["seed"]), listen=o.get("listen"), connections=int(o["connections"]), rate=o.get("rate"),
    )
    res = run(cfg)
    outcome = Counter(v.overall.value for v in res.verdicts)
    print(f"{len(res.verdicts)} verdicts  " + "  ".join(f"{k}={n}" for k, n in sorted(outcome.items())))
    lat = res.latency(cfg.budget_ms)
    if lat is not None:
        proc = lat.stages["processing"]
        print(f"processing ms p50={proc.p50:.3f} p95={proc.p95:.3f} max={proc.max:.3f}  "
              f"over budget ({cfg.budget_ms} ms): {lat.budget_violations}")
    if res.report is not None:
        print(res.report.render_table())
    for err in res.protocol_errors:
        print(f"protocol error: {err}", file=sys.stderr)
    return res.exit_code


def cmd_report(o: dict[str, Any]) -> int:
    if not any(o.get(k) for k in ("log", "latency", "eval")):
        raise RunError("give at least one of --log, --latency, --eval")
    if o.get("log"):
        records = list(read_log(o["log"]))
        header = records[0]
        verdicts = [r for r in records if r.get("type") == "verdict"]
        errors = [r for r in records if r.get("type") == "protocol_error"]
        print(f"log: {o['log']}  mode={header.get('mode')} policy={header.get('policy')}")
        outcome = Counter(v["overall"] for v in verdicts)
        print(f"{len(verdicts)} verdicts  " + "  ".join(f"{k}={n}" for k, n in sorted(outcome.items())))
        loose = Counter(c["id"] for v in verdicts for c in v["components"] if c["defective"])
        if loose:
            print("defects by component: " + "  ".join(f"{k}={n}" for k, n in sorted(loose.items())))
        if errors:
            print(f"{len(errors)} protocol error record(s)")
    if o.get("latency"):
        lat = json.loads(Path(o["latency"]).read_text(encoding="utf-8"))
        print(f"samples={lat.get('samples')} budget={lat.get('budget_ms')} ms "
              f"violations={lat.get('budget_violations')} throughput={lat.get('throughput_per_s', 0):.1f}/s")
        for stage, s in lat.get("stages", {}).items():
            print(f"  {stage:<10} p50={s['p50']:.3f} p95={s['p95']:.3f} max={s['max']:.3f}")
    if o.get("eval"):
        doc = json.loads(Path(o["eval"]).read_text(encoding="utf-8"))

        def f(v: Any) -> str:
            return "  -  " if v is None else f"{v:.3f}"

        print(f"{'Subset':<10} {'Precision':>9} {'Recall':>7} {'mAP@50':>7} {'mAP@50-95':>9}")
        for k, r in doc.items():
            print(f"{k:<10} {f(r['precision']):>9} {f(r['recall']):>7} {f(r['map50']):>7} {f(r['map50_95']):>9}")
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "split": cmd_split,
    "eval": cmd_eval,
    "simulate": cmd_simulate,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("MVQC_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = _build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](_resolve(args))
    except (RunError, DatasetError, FusionError, VerdictLogError, OSError, json.JSONDecodeError) as exc:
        print(f"mvqc {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
