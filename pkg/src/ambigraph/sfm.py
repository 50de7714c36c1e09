"""Marker-based structure from motion on resolved marker-to-camera poses.

Frames: a marker pose ``p_i`` maps marker coordinates to world coordinates,
a camera pose ``q_t`` maps world coordinates to camera coordinates, and a
resolved detection is ``p_i^(t) = q_t ∘ p_i``. The reference marker is the
world frame (``p_ref = identity``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import networkx as nx
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import DisconnectedGraph, InsufficientData, NonPositiveDepth, UnobservedImage
from .geometry import CameraIntrinsics, RigidPose, exp_so3, hat, nearest_rotation
from .ppe import AmbiguousDetection, canonical_corners

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_HAT_BASIS = hat(np.eye(3))


@dataclass
class MarkerMap:
    markers: dict[int, RigidPose]
    cameras: dict[int, RigidPose]
    reference: int

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "reference_marker": self.reference,
            "markers": [{"id": i, **self.markers[i].to_json()} for i in sorted(self.markers)],
            "cameras": [{"id": t, **self.cameras[t].to_json()} for t in sorted(self.cameras)],
        }

    @classmethod
    def from_json(cls, d: dict) -> "MarkerMap":
        return cls(
            markers={int(m["id"]): RigidPose.from_json(m) for m in d["markers"]},
            cameras={int(c["id"]): RigidPose.from_json(c) for c in d["cameras"]},
            reference=int(d["reference_marker"]),
        )


@dataclass
class SolverTrace:
    costs: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    @property
    def max_iterations_reached(self) -> bool:
        return not self.converged


# ---------------------------------------------------------------------------
# pose graph


def _huber_weights(norms: np.ndarray, delta: float) -> np.ndarray:
    return np.where(norms <= delta, 1.0, delta / np.maximum(norms, 1e-300))


def _huber_cost(norms: np.ndarray, delta: float) -> float:
    return float(np.sum(np.where(norms <= delta, norms**2, 2 * delta * norms - delta**2)))


def _relative_measurements(resolved: Mapping[tuple[int, int], RigidPose]):
    """All within-image marker pairs ``(i, j, Z)`` with ``Z = (p_j^(t))⁻¹ ∘ p_i^(t)``."""
    by_image: dict[int, list[int]] = {}
    for t, i in sorted(resolved):
        by_image.setdefault(t, []).append(i)
    out = []
    for t, ms in by_image.items():
        for a in range(len(ms)):
            for b in range(a + 1, len(ms)):
                i, j = ms[a], ms[b]
                Z = resolved[(t, j)].inverse().compose(resolved[(t, i)])
                out.append((t, i, j, Z))
    return out


def _chain_tree(markers, meas, reference, rotations=None):
    g = nx.Graph()
    g.add_nodes_from(markers)
    for t, i, j, Z in meas:
        if not g.has_edge(i, j):
            g.add_edge(i, j, Z=Z, i=i)
    if not nx.is_connected(g):
        raise DisconnectedGraph(list(nx.connected_components(g)))
    poses = {reference: RigidPose.identity()}
    for u, v in nx.bfs_edges(g, reference, sort_neighbors=sorted):
        e = g.edges[u, v]
        # Z maps marker e['i'] into the other marker's frame
        Z = e["Z"] if e["i"] == v else e["Z"].inverse()  # maps v-frame -> u-frame
        chained = poses[u].compose(Z)
        if rotations is not None:
            chained = RigidPose(rotations[v], poses[u].apply(Z.translation))
        poses[v] = chained
    return poses


@dataclass
class PoseGraphResult:
    markers: dict[int, RigidPose]
    reference: int
    trace: SolverTrace


def marker_pose_graph_init(
    resolved: Mapping[tuple[int, int], RigidPose],
    lifted_rotations: Optional[Mapping[int, np.ndarray]] = None,
    reference: Optional[int] = None,
    huber_delta: float = 0.1,
    max_iterations: int = 50,
) -> PoseGraphResult:
    """Absolute marker poses from resolved marker-to-camera poses.

    Rotations start from the averaging solution when given (``R_i`` with
    ``R̃_ij ≈ R_j R_iᵀ`` maps to the marker-to-world rotation ``R_iᵀ``),
    otherwise from chaining along a BFS tree. Translations are chained along
    the same tree, then everything is refined by a Huber-robust pose graph.
    """
    markers = sorted({i for _, i in resolved})
    if not markers:
        raise InsufficientData("no resolved detections")
    reference = markers[0] if reference is None else reference
    meas = _relative_measurements(resolved)
    if len(markers) == 1:
        return PoseGraphResult({reference: RigidPose.identity()}, reference, SolverTrace([0.0], 0, True))

    rot0 = None
    if lifted_rotations is not None:
        Pref = np.asarray(lifted_rotations[reference]).T
        rot0 = {m: Pref.T @ np.asarray(lifted_rotations[m]).T for m in markers}
    poses = _chain_tree(markers, meas, reference, rot0)

    free = [m for m in markers if m != reference]
    col = {m: 6 * k for k, m in enumerate(free)}
    n = 6 * len(free)
    P = {m: poses[m].rotation.copy() for m in markers}
    x = {m: poses[m].translation.copy() for m in markers}
    I_idx = np.array([i for _, i, _, _ in meas])
    J_idx = np.array([j for _, _, j, _ in meas])
    RZ = np.stack([Z.rotation for *_, Z in meas])
    tZ = np.stack([Z.translation for *_, Z in meas])

    def residuals(P_, x_):
        Pi = np.stack([P_[i] for i in I_idx])
        Pj = np.stack([P_[j] for j in J_idx])
        dx = np.stack([x_[i] - x_[j] for i, j in zip(I_idx, J_idx)])
        A = np.swapaxes(Pj, 1, 2) @ Pi
        b = np.einsum("mba,mb->ma", Pj, dx)
        r = np.concatenate([(A - RZ).reshape(-1, 9), b - tZ], axis=1)
        return r, Pi, Pj, dx

    def cost(P_, x_):
        r = residuals(P_, x_)[0]
        return _huber_cost(np.linalg.norm(r, axis=1), huber_delta)

    f = cost(P, x)
    trace = SolverTrace([f])
    lam = 1e-4
    for it in range(1, max_iterations + 1):
        r, Pi, Pj, dx = residuals(P, x)
        w = _huber_weights(np.linalg.norm(r, axis=1), huber_delta)
        PjT = np.swapaxes(Pj, 1, 2)
        # (M, 12, 3) blocks
        dA_dphi_i = np.einsum("mab,kbc,mcd->madk", PjT, _HAT_BASIS, Pi).reshape(-1, 9, 3)
        Ji_phi = np.concatenate([dA_dphi_i, np.zeros((len(r), 3, 3))], axis=1)
        Ji_x = np.concatenate([np.zeros((len(r), 9, 3)), PjT], axis=1)
        db_dphi_j = -np.einsum("mab,kbc,mc->mak", PjT, _HAT_BASIS, dx)
        Jj_phi = np.concatenate([-dA_dphi_i, db_dphi_j], axis=1)
        Jj_x = np.concatenate([np.zeros((len(r), 9, 3)), -PjT], axis=1)
        H = np.zeros((n, n))
        g = np.zeros(n)
        for k in range(len(r)):
            blocks = []
            i, j = I_idx[k], J_idx[k]
            if i in col:
                blocks.append((col[i], np.concatenate([Ji_phi[k], Ji_x[k]], axis=1)))
            if j in col:
                blocks.append((col[j], np.concatenate([Jj_phi[k], Jj_x[k]], axis=1)))
            for ca, Ja in blocks:
                g[ca : ca + 6] += w[k] * Ja.T @ r[k]
                for cb, Jb in blocks:
                    H[ca : ca + 6, cb : cb + 6] += w[k] * Ja.T @ Jb
        accepted = False
        for _ in range(10):
            try:
                delta = -np.linalg.solve(H + lam * (np.diag(np.diag(H)) + 1e-12 * np.eye(n)), g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            P_new, x_new = dict(P), dict(x)
            for m, c0 in col.items():
                P_new[m] = exp_so3(delta[c0 : c0 + 3]) @ P[m]
                x_new[m] = x[m] + delta[c0 + 3 : c0 + 6]
            f_new = cost(P_new, x_new)
            if f_new <= f:
                accepted = True
                done = f - f_new <= 1e-14 * max(f, 1e-300)
                P, x, f = P_new, x_new, f_new
                lam = max(lam * 0.1, 1e-12)
                break
            lam *= 10
        trace.costs.append(f)
        trace.iterations = it
        if not accepted or done or f < 1e-24:
            trace.converged = True
            break
    out = {m: RigidPose(P[m], x[m]) for m in markers}
    out[reference] = RigidPose.identity()
    return PoseGraphResult(out, reference, trace)


# ---------------------------------------------------------------------------
# cameras


def camera_init_single_pose_averaging(
    resolved: Mapping[tuple[int, int], RigidPose],
    markers: Mapping[int, RigidPose],
    images: Optional[Iterable[int]] = None,
) -> dict[int, RigidPose]:
    """Per image, average the camera poses implied by each resolved detection."""
    estimates: dict[int, list[RigidPose]] = {}
    for (t, i), m2c in sorted(resolved.items()):
        if i in markers:
            estimates.setdefault(t, []).append(m2c.compose(markers[i].inverse()))
    if images is not None:
        missing = sorted(set(images) - set(estimates))
        if missing:
            raise UnobservedImage(f"images {missing} observe no mapped marker")
    out = {}
    for t, ests in estimates.items():
        if len(ests) == 1:
            out[t] = ests[0]
            continue
        Rm = nearest_rotation(np.mean([e.rotation for e in ests], axis=0))
        out[t] = RigidPose(Rm, np.mean([e.translation for e in ests], axis=0))
    return out


# ---------------------------------------------------------------------------
# bundle adjustment


@dataclass
class BundleAdjustmentResult:
    map: MarkerMap
    trace: SolverTrace
    rms_px: float


def _ba_problem(detections: list[AmbiguousDetection], K: CameraIntrinsics, marker_size: float):
    corners = canonical_corners(marker_size)
    obs_t = np.repeat([d.image_id for d in detections], 4)
    obs_i = np.repeat([d.marker_id for d in detections], 4)
    obs_c = np.tile(corners, (len(detections), 1))
    obs_uv = np.concatenate([np.asarray(d.corners2d, dtype=float) for d in detections])
    return obs_t, obs_i, obs_c, obs_uv


def bundle_adjust(
    marker_map: MarkerMap,
    detections: Iterable[AmbiguousDetection],
    K: CameraIntrinsics,
    marker_size: float,
    max_iterations: int = 100,
    initial_damping: float = 1e-3,
) -> BundleAdjustmentResult:
    """Levenberg-Marquardt over all marker and camera poses on observed corners.

    Detections whose marker or image is not in ``marker_map`` are ignored.
    The reference marker stays fixed. Damping is multiplicative on the
    normal-equation diagonal: ×0.1 on an accepted step, ×10 on a rejected one.
    """
    dets = [d for d in detections if d.marker_id in marker_map.markers and d.image_id in marker_map.cameras]
    if not dets:
        raise InsufficientData("no detections of mapped markers in localised images")
    dets.sort(key=lambda d: d.key)
    obs_t, obs_i, obs_c, obs_uv = _ba_problem(dets, K, marker_size)
    ref = marker_map.reference
    free_m = sorted(m for m in marker_map.markers if m != ref)
    cams = sorted(marker_map.cameras)
    mcol = {m: 6 * k for k, m in enumerate(free_m)}
    ccol = {t: 6 * (len(free_m) + k) for k, t in enumerate(cams)}
    n = 6 * (len(free_m) + len(cams))
    n_obs = len(obs_uv)
    has_m = np.array([i in mcol for i in obs_i])
    mc = np.array([mcol.get(i, 0) for i in obs_i])
    cc = np.array([ccol[t] for t in obs_t])

    P = {m: p.rotation.copy() for m, p in marker_map.markers.items()}
    x = {m: p.translation.copy() for m, p in marker_map.markers.items()}
    Q = {t: q.rotation.copy() for t, q in marker_map.cameras.items()}
    y = {t: q.translation.copy() for t, q in marker_map.cameras.items()}

    def evaluate(P_, x_, Q_, y_, jac=False):
        Pm = np.stack([P_[i] for i in obs_i])
        xm = np.stack([x_[i] for i in obs_i])
        Qc = np.stack([Q_[t] for t in obs_t])
        yc = np.stack([y_[t] for t in obs_t])
        Pc = np.einsum("nab,nb->na", Pm, obs_c)
        Xw = Pc + xm
        Xc = np.einsum("nab,nb->na", Qc, Xw) + yc
        z = Xc[:, 2]
        if np.any(z <= 1e-9):
            raise NonPositiveDepth("corner behind a camera during bundle adjustment")
        u = K.fx * Xc[:, 0] / z + K.skew * Xc[:, 1] / z + K.cx
        v = K.fy * Xc[:, 1] / z + K.cy
        r = np.stack([u, v], axis=1) - obs_uv
        if not jac:
            return r, None
        dproj = np.zeros((n_obs, 2, 3))
        dproj[:, 0, 0] = K.fx / z
        dproj[:, 0, 1] = K.skew / z
        dproj[:, 0, 2] = -(K.fx * Xc[:, 0] + K.skew * Xc[:, 1]) / z**2
        dproj[:, 1, 1] = K.fy / z
        dproj[:, 1, 2] = -K.fy * Xc[:, 1] / z**2
        dXc_dphi = -Qc @ hat(Pc)
        dXc_dpsi = -hat(np.einsum("nab,nb->na", Qc, Xw))
        Jm = np.concatenate([dproj @ dXc_dphi, dproj @ Qc], axis=2)  # (n, 2, 6)
        Jc = np.concatenate([dproj @ dXc_dpsi, dproj], axis=2)
        rows = np.arange(2 * n_obs).reshape(n_obs, 2)
        r_idx = np.broadcast_to(rows[:, :, None], (n_obs, 2, 6))
        c_cam = np.broadcast_to(cc[:, None, None] + np.arange(6), (n_obs, 2, 6))
        c_mk = np.broadcast_to(mc[:, None, None] + np.arange(6), (n_obs, 2, 6))
        data = np.concatenate([Jc.ravel(), Jm[has_m].ravel()])
        ri = np.concatenate([r_idx.ravel(), r_idx[has_m].ravel()])
        ci = np.concatenate([c_cam.ravel(), c_mk[has_m].ravel()])
        J = sp.csr_matrix((data, (ri, ci)), shape=(2 * n_obs, n))
        return r, J

    r, J = evaluate(P, x, Q, y, jac=True)
    f = float(np.sum(r * r))
    trace = SolverTrace([f])
    lam = initial_damping
    for it in range(1, max_iterations + 1):
        if f < 1e-24:
            trace.converged = True
            break
        A = (J.T @ J).tocsc()
        g = J.T @ r.ravel()
        diag = A.diagonal()
        accepted = False
        done = False
        for _ in range(12):
            M = A + sp.diags(lam * diag + 1e-12)
            delta = -spla.spsolve(M.tocsc(), g)
            if not np.all(np.isfinite(delta)):
                lam *= 10
                continue
            P_n, x_n, Q_n, y_n = dict(P), dict(x), dict(Q), dict(y)
            for m, c0 in mcol.items():
                P_n[m] = exp_so3(delta[c0 : c0 + 3]) @ P[m]
                x_n[m] = x[m] + delta[c0 + 3 : c0 + 6]
            for t, c0 in ccol.items():
                Q_n[t] = exp_so3(delta[c0 : c0 + 3]) @ Q[t]
                y_n[t] = y[t] + delta[c0 + 3 : c0 + 6]
            try:
                r_n, _ = evaluate(P_n, x_n, Q_n, y_n)
            except NonPositiveDepth:
                lam *= 10
                continue
            f_n = float(np.sum(r_n * r_n))
            if f_n <= f:
                done = f - f_n <= 1e-12 * f or np.max(np.abs(delta)) < 1e-12
                P, x, Q, y, f = P_n, x_n, Q_n, y_n, f_n
                r, J = evaluate(P, x, Q, y, jac=True)
                lam = max(lam * 0.1, 1e-12)
                accepted = True
                break
            lam *= 10
        trace.costs.append(f)
        trace.iterations = it
        if not accepted or done:
            trace.converged = True
            break
    new_map = MarkerMap(
        {m: RigidPose(P[m], x[m]) for m in marker_map.markers},
        {t: RigidPose(Q[t], y[t]) for t in marker_map.cameras},
        ref,
    )
    rms = float(np.sqrt(f / max(1, 2 * n_obs)))
    return BundleAdjustmentResult(new_map, trace, rms)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class Reconstruction:
    map: MarkerMap
    markers_mapped: int
    cameras_localised: int
    pose_graph: PoseGraphResult
    bundle: BundleAdjustmentResult


def largest_component(resolved_keys: Iterable[tuple[int, int]]) -> set[int]:
    g = nx.Graph()
    by_image: dict[int, list[int]] = {}
    for t, i in resolved_keys:
        g.add_node(i)
        by_image.setdefault(t, []).append(i)
    for ms in by_image.values():
        ms = sorted(ms)
        g.add_edges_from(zip(ms[:-1], ms[1:]))
    if g.number_of_nodes() == 0:
        return set()
    comps = sorted(nx.connected_components(g), key=lambda c: (-len(c), min(c)))
    return set(comps[0])


def reconstruct(
    detections: Iterable[AmbiguousDetection],
    labels: Mapping[tuple[int, int], Optional[int]],
    K: CameraIntrinsics,
    marker_size: float,
    lifted_rotations: Optional[Mapping[int, np.ndarray]] = None,
    min_markers: int = 1,
) -> Reconstruction:
    """Map the largest connected component of the decided detections.

    Detections labelled ``None`` (abstentions) are dropped before mapping.
    """
    dets = {d.key: d for d in detections}
    decided = {k: a for k, a in labels.items() if a is not None and k in dets}
    comp = largest_component(decided)
    if len(comp) < min_markers or not comp:
        raise InsufficientData(f"only {len(comp)} markers can be mapped from the decided detections")
    resolved = {k: dets[k].pose(a) for k, a in sorted(decided.items()) if k[1] in comp}
    reference = min(comp)
    rot = None
    if lifted_rotations is not None and all(m in lifted_rotations for m in comp):
        rot = lifted_rotations
    pg = marker_pose_graph_init(resolved, rot, reference=reference)
    cams = camera_init_single_pose_averaging(resolved, pg.markers)
    init = MarkerMap(pg.markers, cams, reference)
    ba = bundle_adjust(init, [dets[k] for k in resolved], K, marker_size)
    return Reconstruction(ba.map, len(ba.map.markers), len(ba.map.cameras), pg, ba)
