"""Pose evaluation: ADD/ADI distances, threshold accuracy, depth bands,
and the quaternion-plus-translation challenge score."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import ZeroTranslationError
from .geometry import Pose, quat_angle, transform_to_camera


@dataclass(frozen=True, eq=False)
class ModelCloud:
    """3D model points plus the object diameter (max pairwise distance)."""

    points: np.ndarray
    diameter: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise ValueError("model cloud needs at least two 3D points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("model points must be finite")
        object.__setattr__(self, "points", pts)
        d = _max_pairwise_distance(pts)
        if self.diameter <= 0:
            raise ValueError("diameter must be positive")
        if abs(self.diameter - d) > 1e-9 * max(1.0, d):
            raise ValueError(f"stated diameter {self.diameter} inconsistent with points (computed {d})")

    @classmethod
    def from_points(cls, points) -> "ModelCloud":
        pts = np.asarray(points, dtype=np.float64)
        return cls(points=pts, diameter=_max_pairwise_distance(pts))


def _max_pairwise_distance(pts: np.ndarray) -> float:
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff * diff).sum(axis=2).max()))


@dataclass(frozen=True, eq=False)
class DepthBands:
    """Half-open distance bands [lo, hi) in multiples of the object diameter."""

    bands: tuple[tuple[float, float], ...] = ((1.0, 4.0), (4.0, 7.0), (7.0, 10.0))
    names: tuple[str, ...] = ("near", "medium", "far")

    def __post_init__(self):
        if len(self.bands) != len(self.names):
            raise ValueError("one name per band required")
        prev_hi = -np.inf
        for lo, hi in self.bands:
            if not lo < hi:
                raise ValueError("band boundaries must be increasing")
            if lo < prev_hi:
                raise ValueError("bands must not overlap")
            prev_hi = hi

    def band_of(self, depth_over_d: float) -> str | None:
        for (lo, hi), name in zip(self.bands, self.names):
            if lo <= depth_over_d < hi:
                return name
        return None


class SpeedScore(NamedTuple):
    e_q: float
    e_t: float
    total: float


def add_distance(gt: Pose, est: Pose, cloud: ModelCloud) -> float:
    """Mean distance between correspondingly transformed model points."""
    a = transform_to_camera(gt, cloud.points)
    b = transform_to_camera(est, cloud.points)
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def adi_distance(gt: Pose, est: Pose, cloud: ModelCloud) -> float:
    """Mean nearest-point distance; tolerant of object symmetries."""
    a = transform_to_camera(gt, cloud.points)
    b = transform_to_camera(est, cloud.points)
    return float(_kernels.mean_nearest_distance(a, b))


def adi_accuracy(errors, diameter: float, threshold_frac: float = 0.1) -> float:
    """Fraction of errors below threshold_frac times the diameter.

    An empty error list yields 0.0 plus a RuntimeWarning: small runs may
    legitimately produce empty depth bands.
    """
    if diameter <= 0:
        raise ValueError("diameter must be positive")
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        warnings.warn("accuracy over an empty sample defined as 0.0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.mean(errors < threshold_frac * diameter))


def speed_score(gt: Pose, est: Pose) -> SpeedScore:
    """Quaternion angular error plus translation error normalized by the
    ground-truth distance."""
    tn = float(np.linalg.norm(gt.translation))
    if tn <= 1e-300:
        raise ZeroTranslationError("ground-truth translation norm is zero")
    e_q = quat_angle(gt.quaternion, est.quaternion)
    e_t = float(np.linalg.norm(gt.translation - est.translation)) / tn
    return SpeedScore(e_q=e_q, e_t=e_t, total=e_q + e_t)


def bucket_by_depth(depths_over_d, bands: DepthBands | None = None
                    ) -> tuple[dict[str, list[int]], list[int]]:
    """Partition scene indices into depth bands.

    Returns (per-band index lists, out-of-range indices).  Out-of-range
    scenes are reported rather than silently dropped.
    """
    bands = bands or DepthBands()
    buckets: dict[str, list[int]] = {name: [] for name in bands.names}
    out_of_range: list[int] = []
    for i, depth in enumerate(np.asarray(depths_over_d, dtype=np.float64)):
        name = bands.band_of(float(depth))
        if name is None:
            out_of_range.append(i)
        else:
            buckets[name].append(i)
    return buckets, out_of_range


# ---------------------------------------------------------------------------
# Model loading (vertices only)
# ---------------------------------------------------------------------------

def load_obj_vertices(path) -> np.ndarray:
    verts = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) >= 4 and parts[0] == "v":
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
    if not verts:
        raise ValueError(f"no vertices found in OBJ file {path}")
    return np.asarray(verts, dtype=np.float64)


def load_ply_vertices(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8", errors="strict") as fh:
        line = fh.readline().strip()
        if line != "ply":
            raise ValueError(f"{path} is not a PLY file")
        n_vertices = None
        props: list[str] = []
        in_vertex = False
        fmt = None
        for line in fh:
            line = line.strip()
            if line.startswith("format"):
                fmt = line.split()[1]
            elif line.startswith("element"):
                _, name, count = line.split()
                in_vertex = name == "vertex"
                if in_vertex:
                    n_vertices = int(count)
            elif line.startswith("property") and in_vertex:
                props.append(line.split()[-1])
            elif line == "end_header":
                break
        if fmt != "ascii":
            raise ValueError("only ascii PLY files are supported")
        if n_vertices is None:
            raise ValueError("PLY header declares no vertex element")
        if props[:3] != ["x", "y", "z"]:
            raise ValueError("PLY vertex element must start with x, y, z properties")
        verts = np.empty((n_vertices, 3))
        for i in range(n_vertices):
            parts = fh.readline().split()
            verts[i] = [float(parts[0]), float(parts[1]), float(parts[2])]
    return verts


def load_model_cloud(path) -> ModelCloud:
    p = str(path)
    if p.lower().endswith(".obj"):
        return ModelCloud.from_points(load_obj_vertices(path))
    if p.lower().endswith(".ply"):
        return ModelCloud.from_points(load_ply_vertices(path))
    raise ValueError(f"unsupported model format: {path} (expected .obj or .ply)")
