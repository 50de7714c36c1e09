"""Command-line interface: ``ambigraph {generate,solve,evaluate,experiment}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import jsonschema

from .averaging import AveragingConfig
from .exceptions import (
    AmbigraphError,
    DisconnectedGraph,
    DisconnectedScene,
    InsufficientData,
    MissingGroundTruth,
    NoDecisions,
)
from .geometry import CameraIntrinsics
from .harness import (
    METHODS,
    M2_THRESHOLD,
    M3_THRESHOLD,
    EvaluationReport,
    SceneConfig,
    evaluate_method,
    generate_scene,
    pose_errors,
    precision,
    ratio_histogram,
    run_baseline,
    run_trials,
    summarize,
)
from .io import (
    DETECTIONS_SCHEMA,
    MAP_SCHEMA,
    load_json,
    read_scene,
    require_truth,
    scene_document,
    write_csv,
    write_json,
)
from .sfm import MarkerMap, reconstruct

log = logging.getLogger("ambigraph")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_INSUFFICIENT = 4

DECISION_COLUMNS = ("image_id", "marker_id", "decision", "error_ratio", "weight_ratio")
HISTOGRAM_COLUMNS = ("bin_lo", "bin_hi", "count")


class UsageError(Exception):
    pass


def _seed(args) -> int:
    env = os.environ.get("AMBIGRAPH_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"AMBIGRAPH_SEED must be an integer, got {env!r}") from None
    return args.seed


def _averaging_config(args) -> AveragingConfig:
    return AveragingConfig(
        robust_norm=args.robust_norm,
        scale=args.robust_scale,
        max_iterations=args.max_iterations,
        max_indicator_step=args.indicator_step,
        restarts=args.restarts,
    )


def _threshold(args) -> Optional[float]:
    if args.ratio_threshold is not None:
        return args.ratio_threshold
    return {"m2": M2_THRESHOLD, "m3": M3_THRESHOLD}.get(args.method)


def _scene_config(args, noise: Optional[float] = None) -> SceneConfig:
    return SceneConfig(
        n_markers=args.markers,
        n_images=args.images,
        marker_size=args.marker_size,
        intrinsics=CameraIntrinsics(args.focal, args.focal, args.width / 2.0, args.height / 2.0),
        image_size=(args.width, args.height),
        noise_px=args.noise_px if noise is None else noise,
        seed=_seed(args),
    )


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    if args.markers < 2:
        raise UsageError("a scene needs at least 2 markers for the marker graph to carry relative rotations")
    if args.images < 1:
        raise UsageError("--images must be >= 1")
    cfg = _scene_config(args)
    truth, dets = generate_scene(cfg)
    doc = scene_document(cfg.intrinsics, cfg.marker_size, dets, None if args.no_ground_truth else truth, cfg)
    out = Path(args.output)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_json(out, doc)
    print(f"wrote {out}: {cfg.n_markers} markers, {len(truth.camera_poses)} images, {len(dets)} detections")
    return EXIT_OK


def _decision_rows(dets, labels, weight_ratios):
    rows = []
    for d in sorted(dets, key=lambda d: d.key):
        lab = labels.get(d.key)
        wr = weight_ratios.get(d.key)
        rows.append(
            [
                d.image_id,
                d.marker_id,
                "discarded" if lab is None else lab,
                float(d.error_ratio),
                "" if wr is None else float(wr),
            ]
        )
    return rows


def cmd_solve(args) -> int:
    doc = load_json(args.input, DETECTIONS_SCHEMA)
    K, size, dets, _ = read_scene(doc)
    sel = run_baseline(args.method, dets, _threshold(args), _averaging_config(args))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "decisions.csv", DECISION_COLUMNS, _decision_rows(dets, sel.labels, sel.weight_ratios))
    rec = reconstruct(dets, sel.labels, K, size, sel.lifted_rotations)
    mdoc = rec.map.to_json()
    mdoc["method"] = args.method
    write_json(out / "map.json", mdoc)
    n_disc = sum(v is None for v in sel.labels.values())
    print(
        f"{args.method}: {len(sel.labels) - n_disc} decided, {n_disc} discarded; "
        f"mapped {rec.markers_mapped} markers, localised {rec.cameras_localised} cameras "
        f"(BA RMS {rec.bundle.rms_px:.3g} px)"
    )
    return EXIT_OK


def _read_decisions(path: Path):
    labels, wratios = {}, {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != DECISION_COLUMNS:
            raise UsageError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            key = (int(row["image_id"]), int(row["marker_id"]))
            labels[key] = None if row["decision"] == "discarded" else int(row["decision"])
            if row["weight_ratio"]:
                wratios[key] = float(row["weight_ratio"])
    return labels, wratios


def _report_from_results(results: Path, truth, dets) -> EvaluationReport:
    mdoc = load_json(results / "map.json", MAP_SCHEMA)
    labels, wratios = _read_decisions(results / "decisions.csv")
    marker_map = MarkerMap.from_json(mdoc)
    try:
        prec = precision(labels, truth.labels)
    except NoDecisions:
        prec = math.nan
    err = pose_errors(marker_map, truth)
    return EvaluationReport(
        mdoc.get("method", "unknown"),
        prec,
        len(marker_map.markers),
        len(marker_map.cameras),
        err.marker_deg,
        err.marker_cm,
        err.camera_deg,
        err.camera_cm,
        sum(v is None for v in labels.values()) / max(1, len(labels)),
        {d.key: d.error_ratio for d in dets},
        wratios,
        labels,
    )


def cmd_evaluate(args) -> int:
    doc = load_json(args.input, DETECTIONS_SCHEMA)
    K, size, dets, truth = read_scene(doc)
    truth = require_truth(truth)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    config = _averaging_config(args)
    if args.results:
        reports = [_report_from_results(Path(args.results), truth, dets)]
    else:
        reports = [evaluate_method(m, truth, dets, config)[0] for m in args.methods]
    write_csv(out / "metrics.csv", EvaluationReport.CSV_COLUMNS, [r.row() for r in reports])

    weight_ratios = next((r.weight_ratios for r in reports if r.weight_ratios), None)
    if weight_ratios is None:
        weight_ratios = run_baseline("ours", dets, config=config).weight_ratios
    for name, values in (
        ("error_ratio_hist.csv", [d.error_ratio for d in dets]),
        ("weight_ratio_hist.csv", list(weight_ratios.values())),
    ):
        edges, counts = ratio_histogram(values)
        write_csv(out / name, HISTOGRAM_COLUMNS, zip(edges[:-1], edges[1:], counts.tolist()))
    for r in reports:
        note = f"  ({r.failure})" if r.failure else ""
        print(
            f"{r.method:>5}: precision {r.precision:.4g}%  markers {r.markers_mapped}  "
            f"cameras {r.cameras_localised}{note}"
        )
    return EXIT_OK


def cmd_experiment(args) -> int:
    base_seed = _seed(args)
    rows = []
    for noise in args.noise_px:
        cfg = _scene_config(args, noise=noise)
        trials = run_trials(
            cfg,
            range(base_seed, base_seed + args.trials),
            args.methods,
            _averaging_config(args),
            run_sfm=args.sfm,
            jobs=args.jobs,
        )
        for method, s in summarize(trials).items():
            rows.append([noise, method, s["precision_mean"], s["precision_median"], s["abstention_mean"], s["trials"]])
            print(
                f"sigma={noise:g} {method:>5}: precision mean {s['precision_mean']:.4g} "
                f"median {s['precision_median']:.4g}, abstained {100 * s['abstention_mean']:.3g}%"
            )
    if args.output:
        write_csv(
            Path(args.output),
            ("noise_px", "method", "precision_mean", "precision_median", "abstention_mean", "trials"),
            rows,
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_scene_flags(p: argparse.ArgumentParser) -> None:
    d = SceneConfig()
    p.add_argument("--markers", type=int, default=d.n_markers)
    p.add_argument("--images", type=int, default=d.n_images)
    p.add_argument("--marker-size", type=float, default=d.marker_size, help="side length in meters")
    p.add_argument("--focal", type=float, default=d.intrinsics.fx, help="focal length in pixels")
    p.add_argument("--width", type=int, default=d.image_size[0])
    p.add_argument("--height", type=int, default=d.image_size[1])
    p.add_argument("--seed", type=int, default=0, help="overridden by AMBIGRAPH_SEED")


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    d = AveragingConfig()
    p.add_argument("--robust-norm", choices=("geman_mcclure", "huber", "l1"), default=d.robust_norm)
    p.add_argument("--robust-scale", type=float, default=d.scale)
    p.add_argument("--max-iterations", type=int, default=d.max_iterations)
    p.add_argument("--indicator-step", type=float, default=d.max_indicator_step)
    p.add_argument("--restarts", type=int, default=d.restarts, help="extra random starts for the lifted solver")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ambigraph", description="Resolve planar marker pose ambiguity across views and map the markers."
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic detections file")
    _add_scene_flags(g)
    g.add_argument("--noise-px", type=float, default=0.0)
    g.add_argument("--no-ground-truth", action="store_true")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="select hypotheses and build the marker map")
    s.add_argument("input")
    s.add_argument("--method", choices=METHODS, default="ours")
    s.add_argument("--ratio-threshold", type=float, default=None, help="m2/m3 only; defaults 0.1 / 0.6")
    s.add_argument("--seed", type=int, default=0, help="accepted for symmetry; solves are deterministic")
    _add_solver_flags(s)
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("evaluate", help="score methods against the ground truth in a detections file")
    e.add_argument("input")
    e.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    e.add_argument("--results", default=None, help="evaluate an existing solve output directory instead")
    _add_solver_flags(e)
    e.add_argument("-o", "--output", required=True, help="output directory")
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="Monte-Carlo precision over seeded scenes")
    _add_scene_flags(x)
    x.add_argument("--noise-px", type=float, nargs="+", default=[1.0, 2.0, 3.0])
    x.add_argument("--trials", type=int, default=20)
    x.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    x.add_argument("--sfm", action="store_true", help="also run SfM in every trial")
    x.add_argument("--jobs", type=int, default=1)
    _add_solver_flags(x)
    x.add_argument("-o", "--output", default=None, help="summary CSV")
    x.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (UsageError, ValueError, jsonschema.ValidationError, json.JSONDecodeError, MissingGroundTruth) as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except InsufficientData as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except DisconnectedGraph as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        for comp in exc.components:
            print(f"  component: {comp}", file=sys.stderr)
        return EXIT_SOLVER
    except (DisconnectedScene, AmbigraphError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
