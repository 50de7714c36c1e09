"""Rotation and rigid-pose algebra, pinhole projection and angular metrics.

Rotations are plain ``(3, 3)`` float arrays. Poses map points from a source
frame into a target frame: ``x_target = R @ x_source + t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateMatrix, NonPositiveDepth

DEPTH_EPS = 1e-12


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector (or a stack of them)."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def vee_asym(A: np.ndarray) -> np.ndarray:
    """Vector ``v`` such that ``<A, hat(w)>_F == v @ w`` for every ``w``."""
    return np.stack(
        [
            A[..., 2, 1] - A[..., 1, 2],
            A[..., 0, 2] - A[..., 2, 0],
            A[..., 1, 0] - A[..., 0, 1],
        ],
        axis=-1,
    )


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map, vectorized over leading axes."""
    w = np.asarray(w, dtype=float)
    theta2 = np.sum(w * w, axis=-1)[..., None, None]
    theta = np.sqrt(theta2)
    small = theta2 < 1e-16
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = hat(w)
    return np.eye(3) + a * K + b * (K @ K)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a single rotation matrix."""
    R = np.asarray(R, dtype=float)
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(c)
    if theta < 1e-8:
        return 0.5 * vee_asym(R)
    if np.pi - theta < 1e-6:
        # axis from the symmetric part near 180 degrees
        B = (R + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if np.dot(vee_asym(R), axis) < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * vee_asym(R)


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    R = np.asarray(R)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.allclose(R @ R.T, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) <= tol)


def rot_x(deg: float) -> np.ndarray:
    return exp_so3(np.radians(deg) * np.array([1.0, 0.0, 0.0]))


def rot_y(deg: float) -> np.ndarray:
    return exp_so3(np.radians(deg) * np.array([0.0, 1.0, 0.0]))


def rot_z(deg: float) -> np.ndarray:
    return exp_so3(np.radians(deg) * np.array([0.0, 0.0, 1.0]))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation (via a random unit quaternion)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=float).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RigidPose:
    """Rigid transform ``x -> rotation @ x + translation``.

    Raises:
        ValueError: if ``rotation`` is not in SO(3) within 1e-9.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))
        if not is_rotation(self.rotation, 1e-9):
            raise ValueError("pose rotation is not a proper rotation matrix")

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "RigidPose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Transform a point or an ``(n, 3)`` stack of points."""
        return np.asarray(x, dtype=float) @ self.rotation.T + self.translation

    def compose(self, other: "RigidPose") -> "RigidPose":
        """``self ∘ other``: apply ``other`` first."""
        return RigidPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def inverse(self) -> "RigidPose":
        Rt = self.rotation.T
        return RigidPose(Rt, -Rt @ self.translation)

    def to_json(self) -> dict:
        return {
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_json(cls, d: dict) -> "RigidPose":
        return cls(np.reshape(d["rotation"], (3, 3)), d["translation"])


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def normalize(self, uv: np.ndarray) -> np.ndarray:
        """Pixel coordinates to normalized image coordinates."""
        uv = np.asarray(uv, dtype=float)
        y = (uv[..., 1] - self.cy) / self.fy
        x = (uv[..., 0] - self.cx - self.skew * y) / self.fx
        return np.stack([x, y], axis=-1)

    def to_json(self) -> dict:
        d = {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}
        if self.skew:
            d["skew"] = self.skew
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), float(d.get("skew", 0.0)))


def project_camera_points(K: CameraIntrinsics, Xc: np.ndarray) -> np.ndarray:
    """Project camera-frame points ``(..., 3)`` to pixels ``(..., 2)``."""
    Xc = np.asarray(Xc, dtype=float)
    z = Xc[..., 2]
    if np.any(z <= DEPTH_EPS):
        raise NonPositiveDepth(f"point depth {float(np.min(z)):.3g} is not positive")
    x = Xc[..., 0] / z
    y = Xc[..., 1] / z
    return np.stack([K.fx * x + K.skew * y + K.cx, K.fy * y + K.cy], axis=-1)


def project(K: CameraIntrinsics, c: np.ndarray, p: RigidPose) -> np.ndarray:
    """Pixel location of the marker-frame point ``c`` seen with pose ``p``."""
    return project_camera_points(K, p.apply(c))


def reprojection_error(
    K: CameraIntrinsics, corners3d: np.ndarray, corners2d: np.ndarray, p: RigidPose
) -> float:
    """Sum of squared pixel distances between projected and observed corners."""
    d = project(K, np.asarray(corners3d, dtype=float), p) - np.asarray(corners2d, dtype=float)
    return float(np.sum(d * d))


def error_ratio(r0: float, r1: float) -> float:
    """``min/max`` of two reprojection errors; 1.0 when both vanish."""
    if r0 < 0 or r1 < 0:
        raise ValueError("reprojection errors must be non-negative")
    hi = max(r0, r1)
    if hi == 0.0:
        return 1.0
    return min(r0, r1) / hi


def chordal_distance(Ra: np.ndarray, Rb: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(Ra) - np.asarray(Rb)))


def angular_difference_deg(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Angle of ``Ra Rbᵀ`` in degrees.

    Uses ``atan2(sin, cos)`` from the skew and trace parts, which stays
    accurate near 0 and 180 degrees where ``arccos`` loses digits.
    """
    M = np.asarray(Ra) @ np.asarray(Rb).T
    s = 0.5 * float(np.linalg.norm(vee_asym(M)))
    c = 0.5 * (float(np.trace(M)) - 1.0)
    return float(np.degrees(np.arctan2(s, c)))


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Closest rotation to ``M`` in Frobenius norm (special orthogonal Procrustes)."""
    M = np.asarray(M, dtype=float)
    U, sv, Vt = np.linalg.svd(M)
    if np.sum(sv < 1e-12) >= 2:
        raise DegenerateMatrix(f"singular values {sv} leave the projection undefined")
    d = np.sign(np.linalg.det(U @ Vt))
    if d == 0:
        d = 1.0
    return U @ np.diag([1.0, 1.0, d]) @ Vt
