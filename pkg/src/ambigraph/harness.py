"""Synthetic scenes with ground truth, baselines and evaluation metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional

import networkx as nx
import numpy as np

from .averaging import AveragingConfig, irls_multigraph_averaging
from .exceptions import (
    DegenerateAlignment,
    DisconnectedGraph,
    DisconnectedScene,
    InsufficientData,
    NoDecisions,
    NonPositiveDepth,
    PlaneBehindCamera,
)
from .geometry import CameraIntrinsics, RigidPose, angular_difference_deg, exp_so3
from .multigraph import LABEL_STR, build_multigraph
from .ppe import AmbiguousDetection, MarkerSpec, canonical_corners, closer_hypothesis, synth_detection
from .selection import EdgeWeightTable, disambiguate, select_from_tables
from .sfm import reconstruct

log = logging.getLogger(__name__)

METHODS = ("m1", "m2", "m3", "m4", "ours")
M2_THRESHOLD = 0.1
M3_THRESHOLD = 0.6


@dataclass(frozen=True)
class SceneConfig:
    """Box room with markers on the walls and an inward-looking camera orbit.

    Lengths in meters, angles in degrees, image quantities in pixels.
    """

    n_markers: int = 12
    n_images: int = 40
    marker_size: float = 0.25
    intrinsics: CameraIntrinsics = CameraIntrinsics(350.0, 350.0, 320.0, 240.0)
    image_size: tuple[int, int] = (640, 480)
    room: tuple[float, float, float] = (3.0, 3.0, 2.5)
    marker_height: tuple[float, float] = (1.0, 2.0)
    marker_tilt_deg: float = 10.0
    orbit_radius: tuple[float, float] = (0.2, 0.8)
    camera_height: tuple[float, float] = (1.2, 1.8)
    gaze_jitter_deg: float = 25.0
    max_view_angle_deg: float = 65.0
    min_apparent_px: float = 12.0
    max_markers_per_image: int = 9
    noise_px: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_markers < 1 or self.n_images < 1:
            raise ValueError("need at least one marker and one image")
        if not self.marker_size > 0:
            raise ValueError("marker size must be positive")
        if self.noise_px < 0:
            raise ValueError("noise must be non-negative")


@dataclass
class SceneGroundTruth:
    marker_poses: dict[int, RigidPose]  # marker -> world
    camera_poses: dict[int, RigidPose]  # world -> camera
    m2c: dict[tuple[int, int], RigidPose]
    labels: dict[tuple[int, int], int]
    marker_size: float
    intrinsics: CameraIntrinsics
    config: Optional[SceneConfig] = None


def _wall_marker_pose(rng, cfg: SceneConfig, k: int) -> RigidPose:
    """Marker ``k`` on one of the four walls, facing into the room."""
    W, D, _ = cfg.room
    wall = k % 4
    u = (k // 4 + rng.uniform(0.2, 0.8)) / max(1, (cfg.n_markers + 3) // 4)
    h = rng.uniform(*cfg.marker_height)
    if wall == 0:
        pos, normal = np.array([-W / 2 + u * W, D / 2, h]), np.array([0.0, -1.0, 0.0])
    elif wall == 1:
        pos, normal = np.array([W / 2, D / 2 - u * D, h]), np.array([-1.0, 0.0, 0.0])
    elif wall == 2:
        pos, normal = np.array([W / 2 - u * W, -D / 2, h]), np.array([0.0, 1.0, 0.0])
    else:
        pos, normal = np.array([-W / 2, -D / 2 + u * D, h]), np.array([1.0, 0.0, 0.0])
    up = np.array([0.0, 0.0, 1.0])
    x = np.cross(up, normal)
    R = np.column_stack([x, up, normal])
    tilt = np.radians(cfg.marker_tilt_deg)
    R = R @ exp_so3(rng.uniform(-tilt, tilt, size=3))
    return RigidPose(R, pos)


def _look_rotation(forward: np.ndarray) -> np.ndarray:
    """World-to-camera rotation for a camera looking along ``forward`` (y down, level roll)."""
    f = forward / np.linalg.norm(forward)
    right = np.cross(f, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    return np.vstack([right, down, f])


def _camera_pose(rng, cfg: SceneConfig) -> RigidPose:
    ang = rng.uniform(0, 2 * np.pi)
    rad = rng.uniform(*cfg.orbit_radius)
    C = np.array([rad * np.cos(ang), rad * np.sin(ang), rng.uniform(*cfg.camera_height)])
    to_center = -C[:2] / max(np.linalg.norm(C[:2]), 1e-9)
    yaw = np.radians(rng.uniform(-cfg.gaze_jitter_deg, cfg.gaze_jitter_deg))
    c, s = np.cos(yaw), np.sin(yaw)
    fwd = np.array([c * to_center[0] - s * to_center[1], s * to_center[0] + c * to_center[1], 0.0])
    fwd[2] = np.tan(np.radians(rng.uniform(-5, 5)))
    Q = _look_rotation(fwd)
    return RigidPose(Q, -Q @ C)


def visible(cfg: SceneConfig, marker: RigidPose, camera: RigidPose) -> bool:
    """Frustum, viewing-angle and apparent-size test for one marker."""
    m2c = camera.compose(marker)
    X = m2c.apply(canonical_corners(cfg.marker_size))
    if np.any(X[:, 2] <= 0.1):
        return False
    K = cfg.intrinsics
    uv = np.stack([K.fx * X[:, 0] / X[:, 2] + K.cx, K.fy * X[:, 1] / X[:, 2] + K.cy], axis=-1)
    w, h = cfg.image_size
    if np.any(uv < 2.0) or np.any(uv[:, 0] > w - 2.0) or np.any(uv[:, 1] > h - 2.0):
        return False
    normal_cam = m2c.rotation[:, 2]
    view = -m2c.translation / np.linalg.norm(m2c.translation)
    if np.degrees(np.arccos(np.clip(normal_cam @ view, -1, 1))) > cfg.max_view_angle_deg:
        return False
    side = np.min(np.linalg.norm(uv - np.roll(uv, 1, axis=0), axis=1))
    return bool(side >= cfg.min_apparent_px)


def _layout(cfg: SceneConfig, rng) -> tuple[dict[int, RigidPose], dict[int, RigidPose], dict[int, list[int]]]:
    markers = {i: _wall_marker_pose(rng, cfg, i) for i in range(cfg.n_markers)}
    cameras: dict[int, RigidPose] = {}
    seen: dict[int, list[int]] = {}
    t = 0
    tries = 0
    while t < cfg.n_images and tries < 200 * cfg.n_images:
        tries += 1
        cam = _camera_pose(rng, cfg)
        vis = [i for i, m in markers.items() if visible(cfg, m, cam)]
        if not vis:
            continue
        if len(vis) > cfg.max_markers_per_image:
            dist = [np.linalg.norm(cam.apply(markers[i].translation)) for i in vis]
            vis = [vis[k] for k in np.argsort(dist, kind="stable")[: cfg.max_markers_per_image]]
        cameras[t] = cam
        seen[t] = sorted(vis)
        t += 1
    return markers, cameras, seen


def _connected(n_markers: int, seen: Mapping[int, list[int]]) -> bool:
    g = nx.Graph()
    g.add_nodes_from(range(n_markers))
    for ms in seen.values():
        g.add_edges_from(zip(ms[:-1], ms[1:]))
    return nx.is_connected(g)


def generate_scene(cfg: SceneConfig) -> tuple[SceneGroundTruth, list[AmbiguousDetection]]:
    """Deterministic synthetic scene: layout from one stream, corner noise from another."""
    for attempt in range(10):
        geo = np.random.default_rng([cfg.seed, attempt, 0])
        markers, cameras, seen = _layout(cfg, geo)
        if len(cameras) < cfg.n_images or not _connected(cfg.n_markers, seen):
            continue
        noise = np.random.default_rng([cfg.seed, attempt, 1])
        dets, m2c, labels = [], {}, {}
        ok = True
        for t in sorted(cameras):
            for i in seen[t]:
                pose = cameras[t].compose(markers[i])
                try:
                    _, det, lab = synth_detection(
                        pose, MarkerSpec(i, cfg.marker_size), cfg.intrinsics, cfg.noise_px, noise, image_id=t
                    )
                except (NonPositiveDepth, PlaneBehindCamera):
                    ok = False
                    break
                dets.append(det)
                m2c[(t, i)] = pose
                labels[(t, i)] = lab
            if not ok:
                break
        if not ok:
            continue
        gt = SceneGroundTruth(markers, cameras, m2c, labels, cfg.marker_size, cfg.intrinsics, cfg)
        return gt, dets
    raise DisconnectedScene(f"no connected scene after 10 attempts (seed={cfg.seed})")


def ground_truth_label(det: AmbiguousDetection, true_rotation: np.ndarray) -> int:
    return closer_hypothesis(det, true_rotation)


# ---------------------------------------------------------------------------
# baselines


@dataclass
class MethodSelection:
    method: str
    labels: dict[tuple[int, int], Optional[int]]  # None = abstained
    weight_ratios: dict[tuple[int, int], float] = field(default_factory=dict)
    lifted_rotations: Optional[dict[int, np.ndarray]] = None

    @property
    def decided(self) -> dict[tuple[int, int], int]:
        return {k: v for k, v in self.labels.items() if v is not None}

    @property
    def abstention_rate(self) -> float:
        if not self.labels:
            return 0.0
        return sum(v is None for v in self.labels.values()) / len(self.labels)


def run_baseline(
    method: str,
    detections: Iterable[AmbiguousDetection],
    threshold: Optional[float] = None,
    config: Optional[AveragingConfig] = None,
) -> MethodSelection:
    """Select one hypothesis per detection (or abstain) with the named method."""
    method = method.lower()
    dets = sorted(detections, key=lambda d: d.key)
    if method == "m1":
        return MethodSelection(method, {d.key: 0 for d in dets})
    if method in ("m2", "m3"):
        thr = threshold if threshold is not None else (M2_THRESHOLD if method == "m2" else M3_THRESHOLD)
        return MethodSelection(method, {d.key: (0 if d.error_ratio < thr else None) for d in dets})
    if method == "m4":
        g = build_multigraph(dets)
        res = irls_multigraph_averaging(g, config)
        tables = {}
        for t, ms in g.images.items():
            w = {}
            for p in np.flatnonzero(g.pair_t == t):
                i, j = int(g.pair_i[p]), int(g.pair_j[p])
                vals = np.array([res.edge_weights[(t, i, j, lab)] for lab in LABEL_STR])
                tot = vals.sum()
                w[(i, j)] = vals / tot if tot > 0 else np.full(4, 0.25)
            tables[t] = EdgeWeightTable(t, ms, w)
        labels, _ = select_from_tables(g, tables)
        return MethodSelection(method, labels, lifted_rotations=res.rotations)
    if method == "ours":
        res = disambiguate(dets, config)
        return MethodSelection(method, dict(res.labels), res.weight_ratios, res.averaging.rotations)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def precision(
    selections: Mapping[tuple[int, int], Optional[int]],
    truth: Mapping[tuple[int, int], int],
    allow_global_flip: bool = False,
) -> float:
    """Percentage of decided detections whose label matches the ground truth."""
    decided = {k: v for k, v in selections.items() if v is not None}
    if not decided:
        raise NoDecisions("no detection received a decision")
    correct = sum(int(v == truth[k]) for k, v in decided.items())
    if allow_global_flip:
        correct = max(correct, len(decided) - correct)
    return 100.0 * correct / len(decided)


# ---------------------------------------------------------------------------
# evaluation


def align_se3(src: np.ndarray, dst: np.ndarray) -> RigidPose:
    """Least-squares rigid transform ``A`` with ``dst ≈ A(src)`` (no scale).

    Raises:
        DegenerateAlignment: fewer than three points, or all points collinear.
    """
    src, dst = np.asarray(src, float), np.asarray(dst, float)
    if len(src) < 3:
        raise DegenerateAlignment(f"need at least 3 marker positions, got {len(src)}")
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    X, Y = src - cs, dst - cd
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateAlignment("marker positions are collinear")
    U, _, Vt = np.linalg.svd(Y.T @ X)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ D @ Vt
    return RigidPose(R, cd - R @ cs)


@dataclass
class PoseErrors:
    marker_deg: float
    marker_cm: float
    camera_deg: float
    camera_cm: float


def pose_errors(estimate, truth: SceneGroundTruth) -> PoseErrors:
    """Mean rotation (degrees) and position (cm) errors after rigid alignment.

    ``estimate`` is a :class:`~ambigraph.sfm.MarkerMap`. Markers are compared
    by their world poses, cameras by orientation and optical centre.
    """
    ids = sorted(i for i in estimate.markers if i in truth.marker_poses)
    A = align_se3(
        np.stack([estimate.markers[i].translation for i in ids]),
        np.stack([truth.marker_poses[i].translation for i in ids]),
    )
    m_deg, m_cm = [], []
    for i in ids:
        p = A.compose(estimate.markers[i])
        m_deg.append(angular_difference_deg(p.rotation, truth.marker_poses[i].rotation))
        m_cm.append(100.0 * np.linalg.norm(p.translation - truth.marker_poses[i].translation))
    c_deg, c_cm = [], []
    A_inv = A.inverse()
    for t, q in estimate.cameras.items():
        if t not in truth.camera_poses:
            continue
        qa = q.compose(A_inv)
        qt = truth.camera_poses[t]
        c_deg.append(angular_difference_deg(qa.rotation, qt.rotation))
        c_cm.append(100.0 * np.linalg.norm(qa.inverse().translation - qt.inverse().translation))
    nan = float("nan")
    return PoseErrors(
        float(np.mean(m_deg)),
        float(np.mean(m_cm)),
        float(np.mean(c_deg)) if c_deg else nan,
        float(np.mean(c_cm)) if c_cm else nan,
    )


HISTOGRAM_EDGES = np.round(np.linspace(0.0, 1.0, 21), 10)


def ratio_histogram(values: Iterable[float]) -> tuple[np.ndarray, np.ndarray]:
    """Counts of ratios in 0.05-wide bins over [0, 1]."""
    counts, _ = np.histogram(np.clip(np.fromiter(values, float), 0.0, 1.0), bins=HISTOGRAM_EDGES)
    return HISTOGRAM_EDGES, counts


@dataclass
class EvaluationReport:
    method: str
    precision: float
    markers_mapped: int
    cameras_localised: int
    marker_err_deg: float
    marker_err_cm: float
    cam_err_deg: float
    cam_err_cm: float
    abstention_rate: float = 0.0
    error_ratios: dict[tuple[int, int], float] = field(default_factory=dict, repr=False)
    weight_ratios: dict[tuple[int, int], float] = field(default_factory=dict, repr=False)
    labels: dict[tuple[int, int], Optional[int]] = field(default_factory=dict, repr=False)
    failure: Optional[str] = None

    CSV_COLUMNS = (
        "method",
        "precision",
        "markers_mapped",
        "cameras_localised",
        "marker_err_deg",
        "marker_err_cm",
        "cam_err_deg",
        "cam_err_cm",
    )

    def row(self) -> list:
        return [getattr(self, c) for c in self.CSV_COLUMNS]


def evaluate_method(
    method: str,
    truth: SceneGroundTruth,
    detections: list[AmbiguousDetection],
    config: Optional[AveragingConfig] = None,
    threshold: Optional[float] = None,
    run_sfm: bool = True,
    allow_global_flip: bool = False,
):
    """Selection precision plus SfM accuracy of one method on one scene.

    Returns:
        ``(report, reconstruction)``; the reconstruction is ``None`` when SfM
        was skipped or failed for lack of data, in which case the counts are 0
        and the pose errors NaN.
    """
    sel = run_baseline(method, detections, threshold, config)
    try:
        prec = precision(sel.labels, truth.labels, allow_global_flip)
    except NoDecisions:
        prec = float("nan")
    nan = float("nan")
    report = EvaluationReport(
        method,
        prec,
        0,
        0,
        nan,
        nan,
        nan,
        nan,
        sel.abstention_rate,
        {d.key: d.error_ratio for d in detections},
        dict(sel.weight_ratios),
        dict(sel.labels),
    )
    if not run_sfm:
        return report, None
    try:
        rec = reconstruct(detections, sel.labels, truth.intrinsics, truth.marker_size, sel.lifted_rotations)
    except (InsufficientData, DisconnectedGraph) as exc:
        report.failure = str(exc)
        return report, None
    report.markers_mapped = rec.markers_mapped
    report.cameras_localised = rec.cameras_localised
    try:
        err = pose_errors(rec.map, truth)
        report.marker_err_deg, report.marker_err_cm = err.marker_deg, err.marker_cm
        report.cam_err_deg, report.cam_err_cm = err.camera_deg, err.camera_cm
    except DegenerateAlignment as exc:
        report.failure = str(exc)
    return report, rec


# ---------------------------------------------------------------------------
# Monte-Carlo


def _trial(args):
    cfg, methods, config, run_sfm = args
    truth, dets = generate_scene(cfg)
    return [evaluate_method(m, truth, dets, config, run_sfm=run_sfm)[0] for m in methods]


def run_trials(
    base: SceneConfig,
    seeds: Iterable[int],
    methods: Iterable[str] = METHODS,
    config: Optional[AveragingConfig] = None,
    run_sfm: bool = False,
    jobs: int = 1,
) -> list[list[EvaluationReport]]:
    """One list of per-method reports per seed, in seed order."""
    methods = tuple(methods)
    tasks = [(replace(base, seed=int(s)), methods, config, run_sfm) for s in seeds]
    if jobs <= 1:
        return [_trial(a) for a in tasks]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_trial, tasks))


def summarize(trials: list[list[EvaluationReport]]) -> dict[str, dict[str, float]]:
    """Per-method mean and median of precision and abstention rate."""
    out: dict[str, dict[str, float]] = {}
    for col in zip(*trials):
        prec = np.array([r.precision for r in col], float)
        abst = np.array([r.abstention_rate for r in col], float)
        out[col[0].method] = {
            "precision_mean": float(np.nanmean(prec)) if np.any(np.isfinite(prec)) else float("nan"),
            "precision_median": float(np.nanmedian(prec)) if np.any(np.isfinite(prec)) else float("nan"),
            "abstention_mean": float(abst.mean()),
            "trials": len(col),
        }
    return out
