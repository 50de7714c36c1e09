"""Planar pose estimation from the four corners of a square marker.

The two hypotheses come from the infinitesimal-plane decomposition of the
marker-to-image homography (the two rotations are mirror images about the
line of sight through the marker centre), each refined by a few damped
Gauss-Newton steps on the corner reprojection error.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .exceptions import DegenerateCorners, NonPositiveDepth, PlaneBehindCamera
from .geometry import (
    DEPTH_EPS,
    CameraIntrinsics,
    RigidPose,
    angular_difference_deg,
    error_ratio,
    exp_so3,
    hat,
    reprojection_error,
)

DUPLICATE_DEG = 1e-6
POLISH_ITERATIONS = 30


@dataclass(frozen=True)
class MarkerSpec:
    id: int
    size: float

    def __post_init__(self):
        if not self.size > 0:
            raise ValueError(f"marker size must be positive, got {self.size}")


@dataclass(frozen=True)
class AmbiguousDetection:
    """One marker seen in one image with its two marker-to-camera hypotheses.

    ``pose0`` is always the hypothesis with the lower reprojection error and
    both hypotheses share ``pose0.translation``.
    """

    image_id: int
    marker_id: int
    corners2d: np.ndarray
    pose0: RigidPose
    pose1: RigidPose
    err0: float
    err1: float

    @property
    def key(self) -> tuple[int, int]:
        return (self.image_id, self.marker_id)

    def pose(self, a: int) -> RigidPose:
        return self.pose1 if a else self.pose0

    def rotation(self, a: int) -> np.ndarray:
        return self.pose(a).rotation

    def err(self, a: int) -> float:
        return self.err1 if a else self.err0

    @property
    def error_ratio(self) -> float:
        return error_ratio(self.err0, self.err1)

    @property
    def translation(self) -> np.ndarray:
        return self.pose0.translation


def canonical_corners(spec: MarkerSpec | float) -> np.ndarray:
    """Marker-frame corners, top-left first, matching the usual detector order."""
    size = spec.size if isinstance(spec, MarkerSpec) else float(spec)
    if not size > 0:
        raise ValueError(f"marker size must be positive, got {size}")
    h = size / 2.0
    return np.array([[-h, h, 0.0], [h, h, 0.0], [h, -h, 0.0], [-h, -h, 0.0]])


def _check_corners(xy: np.ndarray) -> None:
    scale = np.max(np.abs(xy - xy.mean(axis=0)))
    if not np.all(np.isfinite(xy)) or scale <= 0:
        raise DegenerateCorners("corners are not finite or all coincide")
    for i in range(4):
        for j in range(i + 1, 4):
            if np.linalg.norm(xy[i] - xy[j]) <= 1e-9 * scale:
                raise DegenerateCorners(f"corners {i} and {j} coincide")
    for i in range(4):
        a, b, c = (xy[(i + k) % 4] for k in range(3))
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(cross) <= 1e-9 * scale * scale:
            raise DegenerateCorners("three corners are collinear")


def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """DLT homography from four plane points to four image points, ``H[2,2] = 1``."""
    rows = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    _, _, Vt = np.linalg.svd(np.asarray(rows))
    H = Vt[-1].reshape(3, 3)
    if abs(H[2, 2]) < 1e-15:
        raise DegenerateCorners("homography maps the marker centre to infinity")
    return H / H[2, 2]


def _ippe_rotations(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The two plane rotations consistent with the homography's first-order behaviour at the origin."""
    v = H[:2, 2]
    J = np.array(
        [
            [H[0, 0] - H[2, 0] * H[0, 2], H[0, 1] - H[2, 1] * H[0, 2]],
            [H[1, 0] - H[2, 0] * H[1, 2], H[1, 1] - H[2, 1] * H[1, 2]],
        ]
    )
    t = np.array([v[0], v[1], 1.0])
    t /= np.linalg.norm(t)
    k = np.cross([0.0, 0.0, 1.0], t)
    s = np.linalg.norm(k)
    if s < 1e-14:
        Rv = np.eye(3)
    else:
        Kx = hat(k / s)
        Rv = np.eye(3) + s * Kx + (1.0 - t[2]) * (Kx @ Kx)
    B = np.hstack([np.eye(2), -v[:, None]]) @ Rv[:, :2]
    A = np.linalg.solve(B, J)
    gamma = np.linalg.svd(A, compute_uv=False)[0]
    R22 = A / gamma
    h = np.eye(2) - R22.T @ R22
    b = np.sqrt(np.clip(np.diag(h), 0.0, None))
    if h[0, 1] < 0:
        b[1] = -b[1]
    d = np.cross(np.append(R22[:, 0], b[0]), np.append(R22[:, 1], b[1]))
    c, a = d[:2], d[2]
    R1 = Rv @ np.block([[R22, c[:, None]], [b[None, :], np.array([[a]])]])
    R2 = Rv @ np.block([[R22, -c[:, None]], [-b[None, :], np.array([[a]])]])
    return R1, R2


def _translation_for(R: np.ndarray, model: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Linear least-squares translation given rotation and normalized observations."""
    X = model @ R.T
    A = np.zeros((8, 3))
    rhs = np.zeros(8)
    A[0::2, 0] = 1.0
    A[0::2, 2] = -xy[:, 0]
    A[1::2, 1] = 1.0
    A[1::2, 2] = -xy[:, 1]
    rhs[0::2] = xy[:, 0] * X[:, 2] - X[:, 0]
    rhs[1::2] = xy[:, 1] * X[:, 2] - X[:, 1]
    return np.linalg.lstsq(A, rhs, rcond=None)[0]


def _residual_and_jacobian(K: CameraIntrinsics, model, uv, R, t):
    Xm = model @ R.T
    Xc = Xm + t
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    if np.any(z <= DEPTH_EPS):
        raise NonPositiveDepth("corner behind camera")
    pred = np.stack([K.fx * x / z + K.skew * y / z + K.cx, K.fy * y / z + K.cy], axis=-1)
    r = (pred - uv).ravel()
    dproj = np.zeros((4, 2, 3))
    dproj[:, 0, 0] = K.fx / z
    dproj[:, 0, 1] = K.skew / z
    dproj[:, 0, 2] = -(K.fx * x + K.skew * y) / z**2
    dproj[:, 1, 1] = K.fy / z
    dproj[:, 1, 2] = -K.fy * y / z**2
    Jm = np.concatenate([dproj @ -hat(Xm), dproj], axis=2).reshape(8, 6)
    return r, Jm


def _polish(K, model, uv, R, t, iterations=POLISH_ITERATIONS):
    """Levenberg-Marquardt on the 6-DOF corner reprojection error."""
    r, J = _residual_and_jacobian(K, model, uv, R, t)
    cost = r @ r
    lam = 1e-6
    for _ in range(iterations):
        g = J.T @ r
        A = J.T @ J
        improved = False
        for _ in range(12):
            try:
                step = -np.linalg.solve(A + lam * (np.diag(np.diag(A)) + 1e-12 * np.eye(6)), g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            R_new = exp_so3(step[:3]) @ R
            t_new = t + step[3:]
            try:
                r_new, J_new = _residual_and_jacobian(K, model, uv, R_new, t_new)
            except NonPositiveDepth:
                lam *= 10
                continue
            c_new = r_new @ r_new
            if c_new <= cost:
                improved = c_new < cost and np.max(np.abs(step)) > 1e-10
                R, t, r, J, cost = R_new, t_new, r_new, J_new, c_new
                lam = max(lam * 0.1, 1e-12)
                break
            lam *= 10
        if not improved or np.linalg.norm(g, np.inf) < 1e-14:
            break
    return R, t, float(cost)


def ppe_candidates(
    corners2d: np.ndarray, spec: MarkerSpec, K: CameraIntrinsics
) -> list[tuple[RigidPose, float]]:
    """Both refined pose hypotheses with their own translations, sorted by error.

    Hypotheses with a corner at non-positive depth are dropped, so the list
    has one or two entries.
    """
    uv = np.asarray(corners2d, dtype=float).reshape(4, 2)
    xy = K.normalize(uv)
    _check_corners(xy)
    model = canonical_corners(spec)
    H = _homography(model[:, :2], xy)
    out = []
    for R in _ippe_rotations(H):
        t = _translation_for(R, model, xy)
        depths = (model @ R.T + t)[:, 2]
        if np.any(depths <= DEPTH_EPS):
            continue
        R, t, err = _polish(K, model, uv, R, t)
        out.append((RigidPose(R, t), err))
    if not out:
        raise PlaneBehindCamera("no pose hypothesis places the marker in front of the camera")
    out.sort(key=lambda pe: pe[1])
    return out


def ppe_solve(
    corners2d: np.ndarray,
    spec: MarkerSpec,
    K: CameraIntrinsics,
    image_id: int = 0,
) -> AmbiguousDetection:
    """Two-hypothesis planar pose for one detected marker."""
    uv = np.asarray(corners2d, dtype=float).reshape(4, 2)
    cands = ppe_candidates(uv, spec, K)
    (p0, e0) = cands[0]
    if len(cands) == 1 or angular_difference_deg(p0.rotation, cands[1][0].rotation) < DUPLICATE_DEG:
        p1, e1 = p0, e0
    else:
        p1 = RigidPose(cands[1][0].rotation, p0.translation)
        e1 = cands[1][1]
        model = canonical_corners(spec)
        if np.any(p1.apply(model)[:, 2] <= DEPTH_EPS):
            p1, e1 = p0, e0
    uv = uv.copy()
    uv.setflags(write=False)
    return AmbiguousDetection(image_id, spec.id, uv, p0, p1, e0, e1)


def closer_hypothesis(det: AmbiguousDetection, true_rotation: np.ndarray) -> int:
    """Index of the hypothesis with the smaller angular difference to the truth (ties go to 0)."""
    th0 = angular_difference_deg(det.pose0.rotation, true_rotation)
    th1 = angular_difference_deg(det.pose1.rotation, true_rotation)
    return 1 if th0 - th1 > 1e-9 else 0


def synth_detection(
    true_pose: RigidPose,
    spec: MarkerSpec,
    K: CameraIntrinsics,
    noise_sigma: float,
    rng_seed: Union[int, np.random.Generator, None] = None,
    image_id: int = 0,
) -> tuple[np.ndarray, AmbiguousDetection, int]:
    """Project a marker with a known pose, add pixel noise and solve PPE.

    Returns:
        The noisy corners, the two-hypothesis detection and the index of the
        hypothesis closest to ``true_pose.rotation``.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    model = canonical_corners(spec)
    Xc = true_pose.apply(model)
    if np.any(Xc[:, 2] <= DEPTH_EPS):
        raise NonPositiveDepth("marker is not in front of the camera")
    z = Xc[:, 2]
    uv = np.stack(
        [K.fx * Xc[:, 0] / z + K.skew * Xc[:, 1] / z + K.cx, K.fy * Xc[:, 1] / z + K.cy], axis=-1
    )
    if noise_sigma > 0:
        uv = uv + rng.normal(scale=noise_sigma, size=uv.shape)
    det = ppe_solve(uv, spec, K, image_id=image_id)
    return det.corners2d, det, closer_hypothesis(det, true_pose.rotation)


__all__ = [
    "MarkerSpec",
    "AmbiguousDetection",
    "canonical_corners",
    "ppe_candidates",
    "ppe_solve",
    "synth_detection",
    "closer_hypothesis",
    "reprojection_error",
]
