"""Pose algebra, pinhole camera model, and perspective projection.

Coordinate conventions (fixed here, used everywhere in the package):

* Camera frame: x right, y down, z forward.  A point is in front of the
  camera when its camera-frame depth z is strictly positive.
* Image frame: u rightward, v downward, origin at the center of the
  top-left pixel.  Accuracy metrics are invariant to this choice.
* Quaternions are stored in (w, x, y, z) order with unit norm.

All types are immutable values and all operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import NonPositiveDepthError

DEPTH_EPS = 1e-12
ROTATION_TOL = 1e-9


def _vec(x, n: int) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).reshape(n)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"expected {n} finite components, got {x!r}")
    return a


# ---------------------------------------------------------------------------
# Quaternion helpers (w, x, y, z)
# ---------------------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    q = _vec(q, 4)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("cannot normalize a (near-)zero quaternion")
    q = q / n
    # canonical sign: first nonzero component positive
    for c in q:
        if c != 0.0:
            if c < 0.0:
                q = -q
            break
    return q


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = _vec(a, 4)
    bw, bx, by, bz = _vec(b, 4)
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    w, x, y, z = _vec(q, 4)
    return np.array([w, -x, -y, -z])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def quat_angle(a, b) -> float:
    """Rotation angle (radians) between two unit quaternions, sign-invariant."""
    d = abs(float(np.dot(quat_normalize(a), quat_normalize(b))))
    return 2.0 * float(np.arccos(min(d, 1.0)))


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = _vec(axis, 3)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise ValueError("axis must be nonzero")
    half = 0.5 * float(angle)
    return quat_normalize(np.concatenate(([np.cos(half)], np.sin(half) * axis / n)))


def _gram_schmidt(R: np.ndarray) -> np.ndarray:
    cols = []
    for j in range(3):
        c = R[:, j].copy()
        for u in cols:
            c -= np.dot(u, c) * u
        n = np.linalg.norm(c)
        if n < 1e-9:
            raise ValueError("matrix columns are (near-)linearly dependent")
        cols.append(c / n)
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths and principal point, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be strictly positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def from_fov(cls, fov_deg: float, image_size: tuple[int, int]) -> "CameraIntrinsics":
        """Square-pixel intrinsics for a given horizontal field of view."""
        if not 0.0 < fov_deg < 180.0:
            raise ValueError("field of view must lie in (0, 180) degrees")
        w, h = image_size
        f = (w / 2.0) / np.tan(np.deg2rad(fov_deg) / 2.0)
        return cls(fx=f, fy=f, cx=w / 2.0, cy=h / 2.0)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform from model frame to camera frame.

    Stored as a unit quaternion plus translation; the rotation matrix is
    derived on demand.  Quaternion storage avoids orthonormality drift
    under repeated composition.
    """

    quaternion: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "quaternion", quat_normalize(self.quaternion))
        object.__setattr__(self, "translation", _vec(self.translation, 3))
        self.quaternion.setflags(write=False)
        self.translation.setflags(write=False)

    @cached_property
    def rotation(self) -> np.ndarray:
        R = quat_to_matrix(self.quaternion)
        R.setflags(write=False)
        return R

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, R, t) -> "Pose":
        """Build from a (possibly slightly drifted) rotation matrix.

        The matrix is re-orthonormalized by Gram-Schmidt; inputs that are
        not close to a proper rotation are rejected.
        """
        R = np.asarray(R, dtype=np.float64).reshape(3, 3)
        Rs = _gram_schmidt(R)
        if np.linalg.det(Rs) < 0:
            raise ValueError("matrix has negative determinant (not a rotation)")
        if np.max(np.abs(Rs - R)) > 1e-3:
            raise ValueError("matrix is too far from orthonormal to be a rotation")
        return cls(matrix_to_quat(Rs), t)

    @classmethod
    def from_axis_angle(cls, axis, angle: float, t) -> "Pose":
        return cls(quat_from_axis_angle(axis, angle), t)

    def compose(self, other: "Pose") -> "Pose":
        """Return self applied after other: (self * other)(p) = self(other(p))."""
        q = quat_multiply(self.quaternion, other.quaternion)
        t = self.rotation @ other.translation + self.translation
        return Pose(q, t)

    def inverse(self) -> "Pose":
        q = quat_conjugate(self.quaternion)
        return Pose(q, -(self.rotation.T @ self.translation))

    def rotation_angle_to(self, other: "Pose") -> float:
        return quat_angle(self.quaternion, other.quaternion)

    def to_dict(self) -> dict:
        return {
            "quaternion_wxyz": [float(c) for c in self.quaternion],
            "translation_xyz": [float(c) for c in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.asarray(d["quaternion_wxyz"], dtype=np.float64),
                   np.asarray(d["translation_xyz"], dtype=np.float64))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def transform_to_camera(pose: Pose, points) -> np.ndarray:
    """Map model-frame points into the camera frame: R p + t."""
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    out = p @ pose.rotation.T + pose.translation
    return out[0] if single else out


def project(K: CameraIntrinsics, pose: Pose, points) -> np.ndarray:
    """Perspective projection of model-frame points into the image.

    Raises NonPositiveDepthError when any point has camera-frame depth
    <= DEPTH_EPS.
    """
    single = np.asarray(points).ndim == 1
    cam = np.atleast_2d(transform_to_camera(pose, points))
    z = cam[:, 2]
    if np.any(z <= DEPTH_EPS):
        raise NonPositiveDepthError(f"minimum camera-frame depth {z.min():g} <= {DEPTH_EPS:g}")
    uv = np.empty((cam.shape[0], 2))
    uv[:, 0] = K.fx * cam[:, 0] / z + K.cx
    uv[:, 1] = K.fy * cam[:, 1] / z + K.cy
    return uv[0] if single else uv


def backproject_ray(K: CameraIntrinsics, uv) -> np.ndarray:
    """Viewing ray through a pixel: ((u-cx)/fx, (v-cy)/fy, 1)."""
    p = np.asarray(uv, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    rays = np.empty((p.shape[0], 3))
    rays[:, 0] = (p[:, 0] - K.cx) / K.fx
    rays[:, 1] = (p[:, 1] - K.cy) / K.fy
    rays[:, 2] = 1.0
    return rays[0] if single else rays
