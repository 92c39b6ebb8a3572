"""Multi-level prediction grids: per-cell objectness and keypoint offsets.

A pyramid prediction holds, for every level, a dense grid of cells.  Each
cell carries an objectness score in [0, 1] and eight 2D offsets pointing
at the projected corners of the object's 3D bounding box.  Offsets are
expressed in units of the level stride, relative to the cell center, so
their magnitudes are comparable across levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateHullError, OutOfBoundsError

NUM_KEYPOINTS = 8

DEFAULT_STRIDES = (8, 16, 32, 64, 128)
DEFAULT_REFERENCE_SIZES = (16.0, 32.0, 64.0, 128.0, 256.0)


@dataclass(frozen=True, eq=False)
class PyramidLevel:
    index: int
    stride: int
    reference_size: float

    def __post_init__(self):
        if self.stride <= 0:
            raise ValueError("stride must be positive")
        if self.reference_size <= 0:
            raise ValueError("reference size must be positive")


@dataclass(frozen=True, eq=False)
class PyramidSpec:
    """Geometry of the prediction pyramid: image size and level layout."""

    image_size: tuple[int, int]
    levels: tuple[PyramidLevel, ...]

    def __post_init__(self):
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ValueError("image size must be positive")
        object.__setattr__(self, "image_size", (int(w), int(h)))
        object.__setattr__(self, "levels", tuple(self.levels))
        if not self.levels:
            raise ValueError("at least one pyramid level is required")
        strides = [lv.stride for lv in self.levels]
        refs = [lv.reference_size for lv in self.levels]
        idxs = [lv.index for lv in self.levels]
        if sorted(strides) != strides or len(set(strides)) != len(strides):
            raise ValueError("strides must be strictly increasing")
        if sorted(refs) != refs or len(set(refs)) != len(refs):
            raise ValueError("reference sizes must be strictly increasing")
        if len(set(idxs)) != len(idxs):
            raise ValueError("level indices must be unique")

    @classmethod
    def default(cls, image_size: tuple[int, int] = (512, 512)) -> "PyramidSpec":
        levels = tuple(
            PyramidLevel(index=i + 1, stride=s, reference_size=r)
            for i, (s, r) in enumerate(zip(DEFAULT_STRIDES, DEFAULT_REFERENCE_SIZES))
        )
        return cls(image_size=image_size, levels=levels)

    def level(self, index: int) -> PyramidLevel:
        for lv in self.levels:
            if lv.index == index:
                return lv
        raise OutOfBoundsError(f"no pyramid level with index {index}")

    def grid_shape(self, index: int) -> tuple[int, int]:
        """(rows, cols) of the cell grid at a level."""
        lv = self.level(index)
        w, h = self.image_size
        return (int(np.ceil(h / lv.stride)), int(np.ceil(w / lv.stride)))

    def subset(self, indices) -> "PyramidSpec":
        keep = tuple(lv for lv in self.levels if lv.index in set(indices))
        if not keep:
            raise OutOfBoundsError(f"no levels matching {indices!r}")
        return PyramidSpec(image_size=self.image_size, levels=keep)

    def reference_sizes(self) -> tuple[float, ...]:
        return tuple(lv.reference_size for lv in self.levels)

    def to_dict(self) -> dict:
        return {
            "image_size": list(self.image_size),
            "levels": [
                {"level": lv.index, "stride": lv.stride, "reference_size": lv.reference_size}
                for lv in self.levels
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PyramidSpec":
        levels = tuple(
            PyramidLevel(index=e["level"], stride=e["stride"], reference_size=e["reference_size"])
            for e in d["levels"]
        )
        return cls(image_size=tuple(d["image_size"]), levels=levels)


@dataclass(frozen=True, eq=False)
class CellPrediction:
    """One cell's output: objectness plus eight stride-unit offsets."""

    objectness: float
    offsets: np.ndarray  # (8, 2)

    def __post_init__(self):
        if not 0.0 <= self.objectness <= 1.0:
            raise ValueError("objectness must lie in [0, 1]")
        off = np.asarray(self.offsets, dtype=np.float64)
        if off.shape != (NUM_KEYPOINTS, 2):
            raise ValueError(f"offsets must have shape ({NUM_KEYPOINTS}, 2)")
        object.__setattr__(self, "offsets", off)


@dataclass(frozen=True, eq=False)
class PyramidPrediction:
    """Dense per-level grids of cell predictions."""

    spec: PyramidSpec
    objectness: tuple[np.ndarray, ...]  # per level (rows, cols)
    offsets: tuple[np.ndarray, ...]     # per level (rows, cols, 8, 2)

    def __post_init__(self):
        if len(self.objectness) != len(self.spec.levels) or len(self.offsets) != len(self.spec.levels):
            raise ValueError("per-level arrays must match the spec's level count")
        obj, off = [], []
        for lv, o, f in zip(self.spec.levels, self.objectness, self.offsets):
            shape = self.spec.grid_shape(lv.index)
            o = np.asarray(o, dtype=np.float64)
            f = np.asarray(f, dtype=np.float64)
            if o.shape != shape:
                raise ValueError(f"objectness grid at level {lv.index} must have shape {shape}")
            if f.shape != shape + (NUM_KEYPOINTS, 2):
                raise ValueError(f"offset grid at level {lv.index} must have shape {shape + (NUM_KEYPOINTS, 2)}")
            obj.append(o)
            off.append(f)
        object.__setattr__(self, "objectness", tuple(obj))
        object.__setattr__(self, "offsets", tuple(off))

    def _pos(self, level: int) -> int:
        for i, lv in enumerate(self.spec.levels):
            if lv.index == level:
                return i
        raise OutOfBoundsError(f"no pyramid level with index {level}")

    def level_objectness(self, level: int) -> np.ndarray:
        return self.objectness[self._pos(level)]

    def level_offsets(self, level: int) -> np.ndarray:
        return self.offsets[self._pos(level)]

    def cell(self, level: int, cell: tuple[int, int]) -> CellPrediction:
        i = self._pos(level)
        r, c = cell
        rows, cols = self.objectness[i].shape
        if not (0 <= r < rows and 0 <= c < cols):
            raise OutOfBoundsError(f"cell {cell} outside {rows}x{cols} grid at level {level}")
        return CellPrediction(float(self.objectness[i][r, c]), self.offsets[i][r, c])

    def subset(self, indices) -> "PyramidPrediction":
        spec = self.spec.subset(indices)
        keep = [i for i, lv in enumerate(self.spec.levels) if lv.index in set(indices)]
        return PyramidPrediction(
            spec=spec,
            objectness=tuple(self.objectness[i] for i in keep),
            offsets=tuple(self.offsets[i] for i in keep),
        )

    @classmethod
    def zeros(cls, spec: PyramidSpec) -> "PyramidPrediction":
        obj, off = [], []
        for lv in spec.levels:
            shape = spec.grid_shape(lv.index)
            obj.append(np.zeros(shape))
            off.append(np.zeros(shape + (NUM_KEYPOINTS, 2)))
        return cls(spec=spec, objectness=tuple(obj), offsets=tuple(off))

    def to_dict(self) -> dict:
        return {
            "pyramid": self.spec.to_dict(),
            "levels": [
                {
                    "level": lv.index,
                    "objectness": o.tolist(),
                    "offsets": f.reshape(f.shape[0], f.shape[1], 2 * NUM_KEYPOINTS).tolist(),
                }
                for lv, o, f in zip(self.spec.levels, self.objectness, self.offsets)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PyramidPrediction":
        spec = PyramidSpec.from_dict(d["pyramid"])
        obj, off = [], []
        for lv, e in zip(spec.levels, d["levels"]):
            if e["level"] != lv.index:
                raise ValueError("level order in serialized prediction must match the spec")
            o = np.asarray(e["objectness"], dtype=np.float64)
            f = np.asarray(e["offsets"], dtype=np.float64)
            off.append(f.reshape(f.shape[0], f.shape[1], NUM_KEYPOINTS, 2))
            obj.append(o)
        return cls(spec=spec, objectness=tuple(obj), offsets=tuple(off))


@dataclass(frozen=True, eq=False)
class SegmentationMask:
    """Per-level boolean grids marking cells inside the object mask."""

    spec: PyramidSpec
    masks: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.masks) != len(self.spec.levels):
            raise ValueError("per-level masks must match the spec's level count")
        ms = []
        for lv, m in zip(self.spec.levels, self.masks):
            m = np.asarray(m, dtype=bool)
            if m.shape != self.spec.grid_shape(lv.index):
                raise ValueError(f"mask at level {lv.index} has wrong shape")
            ms.append(m)
        object.__setattr__(self, "masks", tuple(ms))

    def level_mask(self, level: int) -> np.ndarray:
        for i, lv in enumerate(self.spec.levels):
            if lv.index == level:
                return self.masks[i]
        raise OutOfBoundsError(f"no pyramid level with index {level}")

    def cells(self, level: int) -> np.ndarray:
        """(n, 2) array of (row, col) indices of masked cells, row-major order."""
        return np.argwhere(self.level_mask(level))

    def count(self, level: int) -> int:
        return int(self.level_mask(level).sum())


# ---------------------------------------------------------------------------
# Cell-level operations
# ---------------------------------------------------------------------------

def _check_cell(spec: PyramidSpec, level: int, cell: tuple[int, int]) -> PyramidLevel:
    lv = spec.level(level)
    rows, cols = spec.grid_shape(level)
    r, c = cell
    if not (0 <= r < rows and 0 <= c < cols):
        raise OutOfBoundsError(f"cell {cell} outside {rows}x{cols} grid at level {level}")
    return lv


def cell_center(spec: PyramidSpec, level: int, cell: tuple[int, int]) -> np.ndarray:
    """Image location of a cell center: ((col + 0.5) * stride, (row + 0.5) * stride)."""
    lv = _check_cell(spec, level, cell)
    r, c = cell
    return np.array([(c + 0.5) * lv.stride, (r + 0.5) * lv.stride])


def cell_centers(spec: PyramidSpec, level: int) -> np.ndarray:
    """(rows, cols, 2) array of all cell centers at a level."""
    lv = spec.level(level)
    rows, cols = spec.grid_shape(level)
    u = (np.arange(cols) + 0.5) * lv.stride
    v = (np.arange(rows) + 0.5) * lv.stride
    out = np.empty((rows, cols, 2))
    out[:, :, 0] = u[None, :]
    out[:, :, 1] = v[:, None]
    return out


def decode_keypoints(spec: PyramidSpec, level: int, cell: tuple[int, int], pred) -> np.ndarray:
    """Absolute 2D keypoint locations from a cell's stride-unit offsets."""
    lv = _check_cell(spec, level, cell)
    offsets = pred.offsets if isinstance(pred, CellPrediction) else np.asarray(pred, dtype=np.float64)
    if offsets.shape != (NUM_KEYPOINTS, 2):
        raise ValueError(f"offsets must have shape ({NUM_KEYPOINTS}, 2)")
    return cell_center(spec, level, cell) + offsets * lv.stride


def encode_keypoints(spec: PyramidSpec, level: int, cell: tuple[int, int], targets) -> np.ndarray:
    """Inverse of decode_keypoints: stride-unit offsets that decode to the targets."""
    lv = _check_cell(spec, level, cell)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (NUM_KEYPOINTS, 2):
        raise ValueError(f"targets must have shape ({NUM_KEYPOINTS}, 2)")
    return (targets - cell_center(spec, level, cell)) / lv.stride


# ---------------------------------------------------------------------------
# Mask rasterization
# ---------------------------------------------------------------------------

def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Counterclockwise convex hull (monotone chain); collinear inputs collapse."""
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if pts.shape[0] < 3:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _polygon_area(hull: np.ndarray) -> float:
    if hull.shape[0] < 3:
        return 0.0
    x, y = hull[:, 0], hull[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def points_in_hull(points: np.ndarray, hull: np.ndarray) -> np.ndarray:
    """Boolean mask of points inside (or on the boundary of) a ccw convex hull."""
    points = np.asarray(points, dtype=np.float64)
    inside = np.ones(points.shape[0], dtype=bool)
    m = hull.shape[0]
    for i in range(m):
        a = hull[i]
        b = hull[(i + 1) % m]
        cross = (b[0] - a[0]) * (points[:, 1] - a[1]) - (b[1] - a[1]) * (points[:, 0] - a[0])
        inside &= cross >= -1e-12
    return inside


def rasterize_mask(spec: PyramidSpec, projected_points) -> SegmentationMask:
    """Mark, at every level, the cells whose centers lie inside the convex hull
    of the projected object points.

    The object mask of a real segmentation network is approximated here by
    the convex hull of the projected model points, which is deterministic
    and directly testable.
    """
    pts = np.asarray(projected_points, dtype=np.float64).reshape(-1, 2)
    hull = _convex_hull(pts)
    if _polygon_area(hull) < 1e-9:
        raise DegenerateHullError("projected points span (near-)zero area")
    masks = []
    for lv in spec.levels:
        centers = cell_centers(spec, lv.index)
        rows, cols = centers.shape[:2]
        flat = centers.reshape(-1, 2)
        masks.append(points_in_hull(flat, hull).reshape(rows, cols))
    return SegmentationMask(spec=spec, masks=tuple(masks))


# ---------------------------------------------------------------------------
# Golden-test dump
# ---------------------------------------------------------------------------

def write_prediction_csv(pred: PyramidPrediction, fileobj) -> None:
    """One line per cell: level,row,col,objectness,<16 offset floats>."""
    header = ["level", "row", "col", "objectness"]
    for i in range(NUM_KEYPOINTS):
        header += [f"off{i}u", f"off{i}v"]
    fileobj.write(",".join(header) + "\n")
    for lv, obj, off in zip(pred.spec.levels, pred.objectness, pred.offsets):
        rows, cols = obj.shape
        for r in range(rows):
            for c in range(cols):
                vals = [str(lv.index), str(r), str(c), repr(float(obj[r, c]))]
                vals += [repr(float(x)) for x in off[r, c].reshape(-1)]
                fileobj.write(",".join(vals) + "\n")
