"""Pose recovery from 3D-to-2D correspondences.

DLT initialization, Gauss-Newton refinement of the pixel reprojection
error, and a seed-deterministic RANSAC wrapper.  The numeric inner loops
live in :mod:`widepose._kernels`; this module owns the domain types,
validation, and error translation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateConfigurationError, NoConsensusError, NonPositiveDepthError
from .geometry import DEPTH_EPS, CameraIntrinsics, Pose

MAX_DLT_CONDITION = 1e12
DLT_MIN_POINTS = 6


@dataclass(frozen=True, eq=False)
class Correspondence:
    """A 3D model point paired with a predicted 2D image location."""

    model_point: np.ndarray
    image_point: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        mp = np.asarray(self.model_point, dtype=np.float64).reshape(3)
        ip = np.asarray(self.image_point, dtype=np.float64).reshape(2)
        if not (np.all(np.isfinite(mp)) and np.all(np.isfinite(ip))):
            raise ValueError("correspondence coordinates must be finite")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")
        object.__setattr__(self, "model_point", mp)
        object.__setattr__(self, "image_point", ip)
        object.__setattr__(self, "weight", float(self.weight))

    def to_dict(self) -> dict:
        return {
            "model": [float(x) for x in self.model_point],
            "image": [float(x) for x in self.image_point],
            "weight": self.weight,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Correspondence":
        return cls(d["model"], d["image"], d.get("weight", 1.0))


@dataclass(frozen=True, eq=False)
class RansacParams:
    max_iterations: int = 200
    inlier_threshold_px: float = 5.0
    min_sample_size: int = 4
    confidence: float = 0.99
    rng_seed: int | np.random.SeedSequence = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.inlier_threshold_px <= 0:
            raise ValueError("inlier_threshold_px must be positive")
        if self.min_sample_size < 4:
            raise ValueError("min_sample_size must be >= 4")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class PnpResult:
    pose: Pose
    inlier_flags: np.ndarray
    mean_reprojection_error_px: float
    num_hypotheses: int

    @property
    def inlier_count(self) -> int:
        return int(self.inlier_flags.sum())

    def to_dict(self) -> dict:
        return {
            "pose": self.pose.to_dict(),
            "inliers": [int(b) for b in self.inlier_flags],
            "inlier_count": self.inlier_count,
            "mean_reprojection_error_px": float(self.mean_reprojection_error_px),
            "num_hypotheses": int(self.num_hypotheses),
        }


@dataclass(frozen=True, eq=False)
class RefineResult:
    pose: Pose
    converged: bool
    iterations: int
    initial_cost: float
    final_cost: float


def correspondence_arrays(corrs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(model (n,3), image (n,2), weight (n,)) arrays from Correspondence objects."""
    n = len(corrs)
    obj = np.empty((n, 3))
    uv = np.empty((n, 2))
    w = np.empty(n)
    for i, c in enumerate(corrs):
        obj[i] = c.model_point
        uv[i] = c.image_point
        w[i] = c.weight
    return obj, uv, w


def _normalized(uv: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    xn = np.empty_like(uv)
    xn[:, 0] = (uv[:, 0] - K.cx) / K.fx
    xn[:, 1] = (uv[:, 1] - K.cy) / K.fy
    return xn


def pnp_dlt(corrs, K: CameraIntrinsics) -> Pose:
    """Linear least-squares pose from >= 6 correspondences.

    The rotation block is snapped to SO(3) by orthogonal Procrustes and
    the global sign fixed so mean depth is positive.
    """
    obj, uv, _ = correspondence_arrays(corrs)
    if obj.shape[0] < DLT_MIN_POINTS:
        raise DegenerateConfigurationError(
            f"DLT needs at least {DLT_MIN_POINTS} correspondences, got {obj.shape[0]}"
        )
    R, t, cond = _kernels.dlt_pose(obj, _normalized(uv, K))
    if not np.isfinite(cond) or cond > MAX_DLT_CONDITION:
        raise DegenerateConfigurationError(
            f"design matrix condition {cond:.3g} exceeds {MAX_DLT_CONDITION:g}"
        )
    return Pose.from_matrix(R, t)


def pnp_refine(initial: Pose, corrs, K: CameraIntrinsics,
               max_iters: int = 50, tol: float = 1e-10) -> RefineResult:
    """Gauss-Newton polish of a pose against the weighted pixel residuals.

    Non-convergence is reported through the `converged` flag, never by
    discarding progress: the returned cost is <= the initial cost.
    """
    obj, uv, w = correspondence_arrays(corrs)
    cam = obj @ initial.rotation.T + initial.translation
    if np.any(cam[:, 2] <= DEPTH_EPS):
        raise NonPositiveDepthError("initial pose places a model point at or behind the camera")
    initial_cost = float(_kernels.reprojection_cost(
        initial.rotation, initial.translation, obj, uv, w, K.fx, K.fy, K.cx, K.cy))
    R, t, cost, iters, status = _kernels.gauss_newton_refine(
        initial.rotation, initial.translation, obj, uv, w,
        K.fx, K.fy, K.cx, K.cy, max_iters, tol,
    )
    return RefineResult(
        pose=Pose.from_matrix(R, t),
        converged=status == _kernels.REFINE_CONVERGED,
        iterations=int(iters),
        initial_cost=initial_cost,
        final_cost=float(cost),
    )


def _default_init(obj: np.ndarray, xn: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Crude frontal initialization for sub-DLT sample sizes: identity
    rotation at the depth where the 3D spread matches the normalized 2D
    spread."""
    c3 = obj.mean(axis=0)
    c2 = xn.mean(axis=0)
    s3 = float(np.mean(np.linalg.norm(obj - c3, axis=1)))
    s2 = float(np.mean(np.linalg.norm(xn - c2, axis=1)))
    z0 = s3 / s2 if s2 > 1e-9 else 10.0 * max(s3, 1.0)
    t0 = np.array([c2[0] * z0, c2[1] * z0, z0]) - c3
    return np.eye(3), t0


def pnp_ransac(corrs, K: CameraIntrinsics, params: RansacParams | None = None) -> PnpResult:
    """Robust pose from correspondences contaminated by outliers.

    Minimal samples of 6 are drawn when available (DLT-solvable); with
    fewer than 6 correspondences the sample is the configured minimum and
    hypotheses are refined from the best pose so far.  Deterministic for
    a fixed seed; on equal inlier counts the earlier hypothesis wins.
    """
    params = params or RansacParams()
    obj, uv, w = correspondence_arrays(corrs)
    n = obj.shape[0]
    if n < params.min_sample_size:
        raise NoConsensusError(
            f"need at least {params.min_sample_size} correspondences, got {n}"
        )
    m = params.min_sample_size if params.min_sample_size >= DLT_MIN_POINTS else (
        DLT_MIN_POINTS if n >= DLT_MIN_POINTS else params.min_sample_size
    )
    xn = _normalized(uv, K)
    rng = np.random.default_rng(params.rng_seed)
    samples = np.empty((params.max_iterations, m), dtype=np.int64)
    for i in range(params.max_iterations):
        samples[i] = rng.permutation(n)[:m]
    init_R, init_t = _default_init(obj, xn)
    R, t, inl, count, mean_err, used, status = _kernels.ransac_pnp(
        obj, uv, xn, w, K.fx, K.fy, K.cx, K.cy, samples,
        params.inlier_threshold_px, params.confidence, params.min_sample_size,
        10, 50, 1e-10, init_R, init_t, 1 if m < DLT_MIN_POINTS else 0,
        MAX_DLT_CONDITION,
    )
    if status == _kernels.RANSAC_NO_CONSENSUS:
        raise NoConsensusError(
            f"best inlier count below the minimum of {params.min_sample_size}"
        )
    return PnpResult(
        pose=Pose.from_matrix(R, t),
        inlier_flags=inl.copy(),
        mean_reprojection_error_px=float(mean_err),
        num_hypotheses=int(used),
    )


# ---------------------------------------------------------------------------
# JSON-lines interchange
# ---------------------------------------------------------------------------

def write_correspondences_jsonl(corrs, fileobj) -> None:
    for c in corrs:
        fileobj.write(json.dumps(c.to_dict(), sort_keys=True) + "\n")


def read_correspondences_jsonl(fileobj) -> list[Correspondence]:
    out = []
    for line in fileobj:
        line = line.strip()
        if line:
            out.append(Correspondence.from_dict(json.loads(line)))
    return out
