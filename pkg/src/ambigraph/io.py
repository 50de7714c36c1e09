"""JSON and CSV file formats shared by the command-line tools."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Optional

import jsonschema
import numpy as np

from .exceptions import MissingGroundTruth
from .geometry import CameraIntrinsics, RigidPose
from .harness import SceneConfig, SceneGroundTruth
from .ppe import AmbiguousDetection, MarkerSpec, ppe_solve

SCHEMA_VERSION = 1

_POSE = {
    "type": "object",
    "required": ["id", "rotation", "translation"],
    "properties": {
        "id": {"type": "integer", "minimum": 0},
        "rotation": {"type": "array", "items": {"type": "number"}, "minItems": 9, "maxItems": 9},
        "translation": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
    },
}

DETECTIONS_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "camera", "marker_size_m", "images"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "camera": {
            "type": "object",
            "required": ["fx", "fy", "cx", "cy"],
            "properties": {
                "fx": {"type": "number", "exclusiveMinimum": 0},
                "fy": {"type": "number", "exclusiveMinimum": 0},
                "cx": {"type": "number"},
                "cy": {"type": "number"},
                "skew": {"type": "number"},
            },
        },
        "marker_size_m": {"type": "number", "exclusiveMinimum": 0},
        "images": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "detections"],
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "detections": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["marker_id", "corners_px"],
                            "properties": {
                                "marker_id": {"type": "integer", "minimum": 0},
                                "corners_px": {
                                    "type": "array",
                                    "minItems": 4,
                                    "maxItems": 4,
                                    "items": {
                                        "type": "array",
                                        "minItems": 2,
                                        "maxItems": 2,
                                        "items": {"type": "number"},
                                    },
                                },
                            },
                        },
                    },
                },
            },
        },
        "ground_truth": {
            "type": "object",
            "required": ["markers", "cameras", "labels"],
            "properties": {
                "markers": {"type": "array", "items": _POSE},
                "cameras": {"type": "array", "items": _POSE},
                "labels": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["image_id", "marker_id", "label"],
                        "properties": {
                            "image_id": {"type": "integer", "minimum": 0},
                            "marker_id": {"type": "integer", "minimum": 0},
                            "label": {"enum": [0, 1]},
                        },
                    },
                },
            },
        },
        "generator": {"type": "object"},
    },
}

MAP_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "reference_marker", "markers", "cameras"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "reference_marker": {"type": "integer", "minimum": 0},
        "markers": {"type": "array", "items": _POSE},
        "cameras": {"type": "array", "items": _POSE},
        "method": {"type": "string"},
    },
}


def dumps(doc: dict) -> str:
    """Stable JSON text (sorted keys, shortest round-trip floats)."""
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def write_json(path: Path, doc: dict) -> None:
    Path(path).write_text(dumps(doc))


def load_json(path: Path, schema: dict) -> dict:
    """Read and validate; raises ``jsonschema.ValidationError`` or ``ValueError``."""
    doc = json.loads(Path(path).read_text())
    jsonschema.validate(doc, schema)
    return doc


def _pose_json(pid: int, pose: RigidPose) -> dict:
    return {"id": int(pid), **pose.to_json()}


def scene_document(
    intrinsics: CameraIntrinsics,
    marker_size: float,
    detections: Iterable[AmbiguousDetection],
    truth: Optional[SceneGroundTruth] = None,
    config: Optional[SceneConfig] = None,
) -> dict:
    images: dict[int, list] = {}
    for d in sorted(detections, key=lambda d: d.key):
        images.setdefault(d.image_id, []).append(
            {"marker_id": d.marker_id, "corners_px": np.asarray(d.corners2d, float).tolist()}
        )
    doc = {
        "schema_version": SCHEMA_VERSION,
        "camera": intrinsics.to_json(),
        "marker_size_m": float(marker_size),
        "images": [{"id": t, "detections": dets} for t, dets in sorted(images.items())],
    }
    if truth is not None:
        doc["ground_truth"] = {
            "markers": [_pose_json(i, p) for i, p in sorted(truth.marker_poses.items())],
            "cameras": [_pose_json(t, q) for t, q in sorted(truth.camera_poses.items())],
            "labels": [
                {"image_id": t, "marker_id": i, "label": int(a)} for (t, i), a in sorted(truth.labels.items())
            ],
        }
    if config is not None:
        doc["generator"] = {
            "n_markers": config.n_markers,
            "n_images": config.n_images,
            "noise_px": config.noise_px,
            "seed": config.seed,
        }
    return doc


def read_scene(doc: dict) -> tuple[CameraIntrinsics, float, list[AmbiguousDetection], Optional[SceneGroundTruth]]:
    """Run planar pose estimation on every detection of a validated document."""
    K = CameraIntrinsics.from_json(doc["camera"])
    size = float(doc["marker_size_m"])
    dets = []
    seen = set()
    for img in doc["images"]:
        for d in img["detections"]:
            key = (img["id"], d["marker_id"])
            if key in seen:
                raise ValueError(f"duplicate detection of marker {key[1]} in image {key[0]}")
            seen.add(key)
            dets.append(ppe_solve(np.asarray(d["corners_px"], float), MarkerSpec(key[1], size), K, image_id=key[0]))
    truth = None
    if "ground_truth" in doc:
        gt = doc["ground_truth"]
        markers = {int(m["id"]): RigidPose.from_json(m) for m in gt["markers"]}
        cameras = {int(c["id"]): RigidPose.from_json(c) for c in gt["cameras"]}
        labels = {(int(x["image_id"]), int(x["marker_id"])): int(x["label"]) for x in gt["labels"]}
        m2c = {(t, i): cameras[t].compose(markers[i]) for t, i in labels if t in cameras and i in markers}
        truth = SceneGroundTruth(markers, cameras, m2c, labels, size, K)
    return K, size, dets, truth


def require_truth(truth: Optional[SceneGroundTruth]) -> SceneGroundTruth:
    if truth is None:
        raise MissingGroundTruth("the detections file has no ground_truth block")
    return truth


def fmt(x) -> str:
    """CSV cell: integers as-is, floats with 6 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.6g" % x
    return str(x)


def csv_text(header: Iterable[str], rows: Iterable[Iterable]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for r in rows:
        w.writerow([fmt(x) for x in r])
    return buf.getvalue()


def write_csv(path: Path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    Path(path).write_text(csv_text(header, rows))
