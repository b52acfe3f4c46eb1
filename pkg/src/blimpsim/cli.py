"""Batch command line: scene generation, automated flights, stain scoring,
replay verification, and the piloting server.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path as FsPath

import numpy as np

from . import blimp, planner, reporting, sensors, service, stains, world

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def _scene_from_flag(value: str) -> world.Scene:
    """--scene accepts a file path, 'preset:<name>', or 'gen:<crime>:<plan>:<seed>'."""
    if value.startswith("preset:"):
        name = value.split(":", 1)[1]
        try:
            return world.Scene(world.preset_plan(name), [])
        except KeyError as exc:
            raise DataError(str(exc)) from exc
    if value.startswith("gen:"):
        parts = value.split(":")
        if len(parts) < 2 or parts[1] not in world.CRIME_TYPES:
            raise DataError(f"bad generator spec {value!r}; want gen:<crime>[:<plan>][:<seed>]")
        crime = parts[1]
        plan_name = parts[2] if len(parts) > 2 and parts[2] else "hint-empty"
        seed = int(parts[3]) if len(parts) > 3 else 0
        try:
            plan = world.preset_plan(plan_name)
        except KeyError as exc:
            raise DataError(str(exc)) from exc
        return world.generate_scene(world.default_spec(crime, plan, seed=seed))
    if value in world.PRESET_PLANS:
        return world.Scene(world.preset_plan(value), [])
    path = FsPath(value)
    if not path.exists():
        raise DataError(f"scene file {value!r} not found")
    try:
        return world.load_scene(path.read_bytes())
    except (world.SceneParseError, world.SceneValidationError) as exc:
        raise DataError(f"cannot load scene {value!r}: {exc}") from exc


def _plan_from_flag(value: str) -> world.FloorPlan:
    if value.startswith("empty:"):
        dims = value.split(":", 1)[1]
        try:
            w, h = (float(v) for v in dims.lower().split("x"))
        except ValueError as exc:
            raise UsageError(f"bad plan size {dims!r}; want WxH in meters") from exc
        return world.empty_room(w, h)
    try:
        return world.preset_plan(value)
    except KeyError as exc:
        raise DataError(str(exc)) from exc


def _parse_seeds(value: str) -> list[int]:
    if "," in value:
        return [int(v) for v in value.split(",") if v.strip() != ""]
    n = int(value)
    if n <= 0:
        raise UsageError("need at least one seed")
    return list(range(n))


def _write(path: FsPath, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


# ---------------------------------------------------------------------------
# scene
# ---------------------------------------------------------------------------


def cmd_scene(args) -> int:
    if args.scene_cmd == "gen":
        plan = _plan_from_flag(args.plan)
        spec = world.default_spec(args.crime, plan, seed=args.seed)
        scene = world.generate_scene(spec)
    else:  # heap
        if args.items == "default7":
            kinds = world.default_evidence_set()
        else:
            kinds = []
            for name in args.items.split(","):
                if name not in world.STANDARD_KINDS:
                    raise DataError(f"unknown evidence kind {name!r}")
                kinds.append(world.STANDARD_KINDS[name])
        try:
            cols, rows = (int(v) for v in args.grid.lower().split("x"))
        except ValueError as exc:
            raise UsageError(f"bad grid {args.grid!r}; want CxR") from exc
        try:
            scene = world.generate_heap(kinds, (cols, rows), args.cell)
        except world.HeapPlacementError as exc:
            raise DataError(str(exc)) from exc
    data = world.save_scene(scene)
    out = FsPath(args.out)
    _write(out, data)
    print(f"wrote {out} ({len(scene.evidence)} evidence items, seed {scene.seed})")
    print(reporting.scene_manifest_table(scene))
    return EXIT_OK


# ---------------------------------------------------------------------------
# fly
# ---------------------------------------------------------------------------


def _fly_one(payload: tuple) -> tuple[int, bytes]:
    (scene_bytes, planner_name, params, seed) = payload
    scene = world.load_scene(scene_bytes)
    cam = sensors.CameraModel()
    drift = blimp.DriftModel(seed=seed)
    if planner_name == "wall":
        log = planner.plan_wall_follow(
            scene, side=params["side"], budget_s=params["budget_s"], seed=seed
        )
        return seed, planner.save_runlog(log)
    if planner_name == "snake":
        path = planner.plan_snake(scene.floor_plan, cam, params["altitude_m"], params["overlap"])
    elif planner_name == "spiral":
        path = planner.plan_spiral(scene.floor_plan, cam, params["altitude_m"], params["overlap"])
    elif planner_name == "random":
        path = planner.plan_random_walk(
            scene.floor_plan, cam, params["altitude_m"], params["budget_s"], seed
        )
    elif planner_name == "two-phase":
        detections = params["detections"]
        if detections == "auto":
            high = planner.plan_snake(
                scene.floor_plan, cam, params["altitude_m"], params["overlap"]
            )
            scout = planner.ideal_run_log(scene, high, cam)
            seen: set[str] = set()
            for fr in scout.camera_frames():
                seen |= fr.captured_ids
            interesting = []
            for item_id in sorted(seen):
                item = scene.evidence_by_id(item_id)
                if item.kind.name.startswith("blood_sheet") or item.touched_at_s is not None:
                    interesting.append(item.position_m)
            detections = interesting
        path = planner.plan_two_phase(
            scene, cam, params["altitude_m"], params["low_altitude_m"], detections,
            params["overlap"],
        )
    else:
        raise DataError(f"unknown planner {planner_name!r}")
    if params["ideal"]:
        log = planner.ideal_run_log(scene, path, cam)
    else:
        log = planner.execute_path(
            scene,
            path,
            drift=drift,
            seed=seed,
            cam=cam,
            closed_loop=not params["open_loop"],
            battery=blimp.BatteryState(capacity_mah=params["battery_mah"]),
        )
    return seed, planner.save_runlog(log)


def cmd_fly(args) -> int:
    scene = _scene_from_flag(args.scene)
    seeds = _parse_seeds(args.seeds)
    if not seeds:
        raise UsageError("need at least one seed")
    out_dir = FsPath(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = {
        "altitude_m": args.altitude,
        "low_altitude_m": args.low_altitude,
        "overlap": args.overlap,
        "budget_s": args.budget,
        "side": args.side,
        "open_loop": args.open_loop,
        "ideal": args.ideal,
        "battery_mah": args.battery_mah,
        "detections": args.detections if args.detections == "auto" else _parse_detections(args.detections),
    }
    scene_bytes = world.save_scene(scene)
    jobs = [(scene_bytes, args.planner, params, seed) for seed in seeds]
    results: dict[int, bytes] = {}
    errors: dict[int, str] = {}
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for seed, data in pool.map(_fly_one, jobs):
                results[seed] = data
    else:
        for job in jobs:
            try:
                seed, data = _fly_one(job)
                results[seed] = data
            except (planner.PlanningError, planner.ExecutionError) as exc:
                errors[job[3]] = str(exc)
    per_seed: dict[int, planner.PlanMetrics] = {}
    logs: dict[int, planner.RunLog] = {}
    flags: dict[int, dict] = {}
    for seed, data in sorted(results.items()):
        log_path = out_dir / f"runlog_seed{seed}.jsonl"
        _write(log_path, data)
        log = planner.load_runlog(data)
        logs[seed] = log
        per_seed[seed] = planner.compute_metrics(log, scene)
        flags[seed] = {"truncated": log.truncated, "aborted": log.aborted}
        if log.truncated:
            print(f"seed {seed}: truncated (battery exhausted)", file=sys.stderr)
        if log.aborted:
            print(f"seed {seed}: aborted (lost wall)", file=sys.stderr)
    if not per_seed:
        raise DataError(
            "no runs succeeded: " + "; ".join(f"seed {s}: {e}" for s, e in errors.items())
        )
    aggregate = planner.aggregate_metrics(list(per_seed.values()))
    pooled = planner.pooled_capture_fraction(list(logs.values()), [scene] * len(logs))
    doc = {
        "v": 1,
        "planner": args.planner,
        "scene_hash": world.scene_hash(scene),
        "params": {k: v for k, v in params.items() if k != "detections"},
        "per_seed": {str(s): m.to_dict() for s, m in per_seed.items()},
        "flags": {str(s): f for s, f in flags.items()},
        "aggregate": aggregate,
        "pooled_evidence_capture_fraction": pooled,
        "errors": {str(s): e for s, e in errors.items()},
    }
    _write(out_dir / "metrics.json", json.dumps(doc, indent=2, sort_keys=True).encode())
    (out_dir / "metrics.csv").write_text(reporting.metrics_csv(per_seed))
    headers, rows = reporting.metrics_rows(per_seed)
    table = reporting.format_table(headers, rows)
    (out_dir / "metrics.txt").write_text(
        table + "\n\n" + reporting.aggregate_table(aggregate) + "\n"
    )
    if args.figures:
        fig_dir = out_dir / "figures"
        fig_dir.mkdir(exist_ok=True)
        for seed, log in logs.items():
            reporting.save_coverage_figure(
                scene, log, str(fig_dir / f"coverage_seed{seed}.png")
            )
            if log.path is not None:
                reporting.save_path_figure(
                    scene, log.path.waypoints, str(fig_dir / f"path_seed{seed}.png")
                )
    if args.format == "table":
        print(table)
        print()
        print(reporting.aggregate_table(aggregate))
        print(f"pooled evidence capture: {pooled:.1%}")
    else:
        print(json.dumps(doc, indent=2, sort_keys=True))
    for seed, err in errors.items():
        print(f"seed {seed}: ERROR {err}", file=sys.stderr)
    return EXIT_OK


def _parse_detections(value: str | None):
    if not value:
        return []
    points = []
    for chunk in value.split(";"):
        x, y = (float(v) for v in chunk.split(","))
        points.append((x, y))
    return points


# ---------------------------------------------------------------------------
# stains
# ---------------------------------------------------------------------------


def cmd_stains(args) -> int:
    cfg = stains.ClassifierConfig(
        min_area_px=args.min_area,
        transfer_area_px=args.transfer_area,
        eccentricity_threshold=args.eccentricity_threshold,
    )
    truths = None
    if args.input:
        path = FsPath(args.input)
        if not path.exists():
            raise DataError(f"raster {args.input!r} not found")
        from PIL import Image, UnidentifiedImageError

        try:
            pixels = np.asarray(Image.open(path).convert("RGB"))
        except (UnidentifiedImageError, OSError) as exc:
            raise DataError(f"cannot read image {args.input!r}: {exc}") from exc
        raster = stains.StainRaster(pixels, [], seed=0)
        if args.truth:
            truths = _load_truths(args.truth)
            raster.truths.extend(truths)
    else:
        counts = [int(v) for v in args.synthesize.split(",")]
        if len(counts) not in (3, 4):
            raise UsageError("--synthesize wants passive,active,transfer[,distractors]")
        distractors = counts[3] if len(counts) == 4 else 0
        # Sheets are generated against the default thresholds so that
        # classifier flags re-score the same raster rather than moving it.
        params = stains.margin_params(tuple(counts[:3]), args.margin, None, distractors)
        raster = stains.synthesize_stain_sheet(params, args.seed)
    predictions = stains.classify_raster(raster, cfg)
    out_dir = FsPath(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reporting.save_annotated_stains(
        raster, predictions, str(out_dir / "annotated.png"), show_truth=bool(raster.truths)
    )
    doc = {
        "v": 1,
        "predictions": [
            {
                "class": p.stain_class,
                "centroid_px": list(p.fit.centroid_px),
                "semi_axes_px": list(p.fit.semi_axes_px),
                "orientation_rad": p.fit.orientation_rad,
                "area_px": p.fit.area_px,
                "eccentricity": p.fit.eccentricity,
            }
            for p in predictions
        ],
        "thresholds": {
            "transfer_area_px": cfg.transfer_area_px,
            "eccentricity": cfg.eccentricity_threshold,
            "min_area_px": cfg.min_area_px,
        },
    }
    if raster.truths:
        report = stains.evaluate_classification(predictions, raster.truths)
        doc["report"] = report.to_dict()
        print(reporting.confusion_table(report))
    else:
        print(f"{len(predictions)} stains classified (no ground truth supplied)")
    _write(out_dir / "report.json", json.dumps(doc, indent=2, sort_keys=True).encode())
    print(f"annotated raster: {out_dir / 'annotated.png'}")
    return EXIT_OK


def _load_truths(path: str) -> list[stains.StainGroundTruth]:
    try:
        doc = json.loads(FsPath(path).read_text())
        return [
            stains.StainGroundTruth(
                id=str(t["id"]),
                stain_class=str(t["class"]),
                center_px=(float(t["center"][0]), float(t["center"][1])),
                semi_axes_px=(float(t["axes"][0]), float(t["axes"][1])),
                orientation_rad=float(t.get("orientation", 0.0)),
                color=(255, 0, 0),
            )
            for t in doc
        ]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"cannot load truth file {path!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------


def cmd_replay(args) -> int:
    log_path = FsPath(args.log)
    if not log_path.exists():
        raise DataError(f"log {args.log!r} not found")
    try:
        log = planner.load_runlog(log_path.read_bytes())
    except planner.RunLogError as exc:
        raise DataError(str(exc)) from exc
    scene = _scene_from_flag(args.scene)
    try:
        metrics = service.replay_metrics(log, scene)
    except service.SessionError as exc:
        raise DataError(str(exc)) from exc
    print(reporting.format_table(*reporting.metrics_rows({log.seed: metrics})))
    if args.verify:
        stored_path = FsPath(args.metrics) if args.metrics else log_path.parent / "metrics.json"
        if stored_path.exists():
            stored_doc = json.loads(stored_path.read_text())
            stored = stored_doc.get("per_seed", {}).get(str(log.seed))
            if stored is None:
                raise DataError(f"{stored_path} has no entry for seed {log.seed}")
        else:
            # No stored report (e.g. a manually piloted session): verify that
            # an independent reload reproduces the metrics bit-exactly.
            stored = service.replay_metrics(
                planner.load_runlog(log_path.read_bytes()), scene
            ).to_dict()
        if stored == metrics.to_dict():
            print("verify: OK (replay metrics reproducible)")
        else:
            print("verify: MISMATCH")
            for key, value in metrics.to_dict().items():
                if stored.get(key) != value:
                    print(f"  {key}: stored {stored.get(key)!r} != replay {value!r}")
            return EXIT_DATA
    return EXIT_OK


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------


def cmd_serve(args) -> int:
    import uvicorn

    app = service.create_app(static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="blimpsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_scene = sub.add_parser("scene", help="generate crime scenes")
    scene_sub = p_scene.add_subparsers(dest="scene_cmd", required=True)
    p_gen = scene_sub.add_parser("gen", help="probabilistic scene generator")
    p_gen.add_argument("--crime", choices=world.CRIME_TYPES, required=True)
    p_gen.add_argument("--plan", default="hint-empty",
                       help="preset name or empty:WxH (meters)")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("-o", "--out", required=True)
    p_gen.set_defaults(func=cmd_scene)
    p_heap = scene_sub.add_parser("heap", help="pack evidence into a heap grid")
    p_heap.add_argument("--items", default="default7",
                        help="'default7' or comma-separated kind names")
    p_heap.add_argument("--grid", default="6x6")
    p_heap.add_argument("--cell", type=float, default=0.3, help="heap cell size [m]")
    p_heap.add_argument("-o", "--out", required=True)
    p_heap.set_defaults(func=cmd_scene)

    p_fly = sub.add_parser("fly", help="run a planner over drift seeds")
    p_fly.add_argument("--scene", required=True,
                       help="scene file, preset name, or gen:<crime>:<plan>:<seed>")
    p_fly.add_argument("--planner", choices=("snake", "spiral", "random", "wall", "two-phase"),
                       default="snake")
    p_fly.add_argument("--altitude", type=float, default=1.5)
    p_fly.add_argument("--low-altitude", type=float, default=0.8)
    p_fly.add_argument("--overlap", type=float, default=0.25)
    p_fly.add_argument("--budget", type=float, default=1200.0)
    p_fly.add_argument("--side", choices=("left", "right"), default="left")
    p_fly.add_argument("--battery-mah", type=float, default=1000.0)
    p_fly.add_argument("--seeds", default="1", help="count or comma-separated list")
    p_fly.add_argument("--detections", default=None,
                       help="two-phase revisits: 'auto' or 'x,y;x,y;...'")
    p_fly.add_argument("--open-loop", action="store_true")
    p_fly.add_argument("--ideal", action="store_true",
                       help="geometric traversal without simulation")
    p_fly.add_argument("--jobs", type=int, default=1)
    p_fly.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    p_fly.add_argument("--format", choices=("json", "table"), default="table")
    p_fly.add_argument("-o", "--out", default="fly-out")
    p_fly.set_defaults(func=cmd_fly)

    p_stains = sub.add_parser("stains", help="classify a stain sheet")
    group = p_stains.add_mutually_exclusive_group(required=True)
    group.add_argument("--input", help="PNG raster to classify")
    group.add_argument("--synthesize", help="counts: passive,active,transfer[,distractors]")
    p_stains.add_argument("--truth", help="ground-truth JSON for --input")
    p_stains.add_argument("--margin", type=float, default=1.0)
    p_stains.add_argument("--seed", type=int, default=0)
    p_stains.add_argument("--min-area", type=int, default=30)
    p_stains.add_argument("--transfer-area", type=float, default=5000.0)
    p_stains.add_argument("--eccentricity-threshold", type=float, default=0.85)
    p_stains.add_argument("-o", "--out", default="stains-out")
    p_stains.set_defaults(func=cmd_stains)

    p_replay = sub.add_parser("replay", help="recompute metrics from a run log")
    p_replay.add_argument("--log", required=True)
    p_replay.add_argument("--scene", required=True)
    p_replay.add_argument("--metrics", help="stored metrics.json (default: next to log)")
    p_replay.add_argument("--verify", action="store_true")
    p_replay.set_defaults(func=cmd_replay)

    p_serve = sub.add_parser("serve", help="start the piloting service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8750)
    p_serve.add_argument("--static", default=None, help="directory with the web UI build")
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (world.SceneGenerationError, world.HeapPlacementError,
            planner.PlanningError, planner.ExecutionError, planner.RunLogError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as exc:  # stable contract for CI
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
