"""Synthetic wide-depth-range scenario generator.

Stands in for a trained prediction network: generates cameras and poses
over a wide distance range, then synthesizes pyramid predictions with a
controllable noise model so the sampling, fusion, loss, and metric
claims can be exercised end to end.

The objectness generative model deliberately encodes level/scale
affinity (scores fall off with the log2 mismatch between the object's
projected size and a level's reference size, and offset noise grows with
the same mismatch), so per-level depth specialization emerges.  This is
a documented surrogate for network behavior, not a measured property.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDepthError, ObjectNotVisibleError
from .fusion import FusionParams, try_fuse
from .geometry import CameraIntrinsics, Pose, project
from .grid import NUM_KEYPOINTS, PyramidPrediction, PyramidSpec, cell_centers, points_in_hull, _convex_hull
from .metrics import DepthBands, ModelCloud, adi_accuracy, adi_distance


@dataclass(frozen=True, eq=False)
class ScenarioParams:
    """Camera and placement distribution for generated scenes."""

    fov_deg: float = 100.0
    image_size: tuple[int, int] = (512, 512)
    depth_range_diameters: tuple[float, float] = (1.0, 10.0)
    diameter: float = 1.0
    allow_truncation: bool = False

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("fov_deg must lie in (0, 180)")
        lo, hi = self.depth_range_diameters
        if lo < 1.0 or not lo < hi:
            raise ValueError("depth range must satisfy 1 <= min < max (in diameters)")
        if self.diameter <= 0:
            raise ValueError("diameter must be positive")


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Surrogate prediction noise.

    Offset noise is Gaussian, specified in stride units of the finest
    level; in pixels it grows sub-linearly with the stride
    (stride_exponent < 1 models the richer per-cell context of coarse
    feature maps) and quadratically with the level's log2 scale mismatch.
    Objectness starts at a base score, falls off quadratically with the
    same mismatch, and carries a small per-cell jitter.  A fraction of
    in-mask cells are gross outliers whose offsets point at uniform image
    locations; their objectness is damped so confidently-wrong cells stay
    rare, yet they still enter the correspondence pool.
    """

    offset_sigma_strides: float = 0.15
    offset_sigma_stride_exponent: float = 0.25
    offset_sigma_scale: float = 0.75
    outlier_rate: float = 0.05
    objectness_base: float = 0.95
    objectness_falloff: float = 0.45
    objectness_jitter: float = 0.01
    background_objectness_max: float = 0.05

    def __post_init__(self):
        if self.offset_sigma_strides < 0 or self.offset_sigma_scale < 0:
            raise ValueError("offset noise parameters must be >= 0")
        if not 0.0 <= self.offset_sigma_stride_exponent <= 1.0:
            raise ValueError("offset_sigma_stride_exponent must lie in [0, 1]")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise ValueError("outlier_rate must lie in [0, 1]")
        if not 0.0 < self.objectness_base <= 1.0:
            raise ValueError("objectness_base must lie in (0, 1]")
        if self.objectness_falloff < 0 or self.objectness_jitter < 0:
            raise ValueError("objectness parameters must be >= 0")
        if not 0.0 <= self.background_objectness_max < 1.0:
            raise ValueError("background_objectness_max must lie in [0, 1)")

    def sigma_strides(self, stride: float, finest_stride: float, delta: float) -> float:
        """Offset noise at a level, in that level's stride units."""
        ratio = stride / finest_stride
        return (self.offset_sigma_strides
                * ratio ** (self.offset_sigma_stride_exponent - 1.0)
                * (1.0 + self.offset_sigma_scale * delta * delta))

    @classmethod
    def zero(cls) -> "NoiseModel":
        """Fully deterministic predictions: exact offsets, no outliers."""
        return cls(offset_sigma_strides=0.0, offset_sigma_scale=0.0, outlier_rate=0.0,
                   objectness_jitter=0.0, background_objectness_max=0.0)


@dataclass(frozen=True, eq=False)
class Scene:
    """One generated view: camera, ground-truth pose, and box keypoints."""

    camera: CameraIntrinsics
    gt_pose: Pose
    keypoints: np.ndarray  # (8, 3) model-frame box corners
    cloud: ModelCloud
    depth_over_d: float
    bbox_size_px: float

    def true_projections(self) -> np.ndarray:
        return project(self.camera, self.gt_pose, self.keypoints)


def default_model_cloud(diameter: float = 1.0) -> ModelCloud:
    """Cube-satellite stand-in: box corners, face centers, and center.

    The cube's space diagonal equals the requested diameter.
    """
    side = diameter / np.sqrt(3.0)
    h = side / 2.0
    pts = [
        [sx * h, sy * h, sz * h]
        for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)
    ]
    pts += [[h, 0, 0], [-h, 0, 0], [0, h, 0], [0, -h, 0], [0, 0, h], [0, 0, -h]]
    pts.append([0.0, 0.0, 0.0])
    return ModelCloud.from_points(np.asarray(pts, dtype=np.float64))


def box_corners(points) -> np.ndarray:
    """The 8 corners of the axis-aligned bounding box of a point set,
    in fixed bit order (x fastest, then y, then z)."""
    pts = np.asarray(points, dtype=np.float64)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    corners = np.empty((8, 3))
    for i in range(8):
        corners[i, 0] = hi[0] if i & 1 else lo[0]
        corners[i, 1] = hi[1] if i & 2 else lo[1]
        corners[i, 2] = hi[2] if i & 4 else lo[2]
    return corners


def generate_scene(params: ScenarioParams, rng, cloud: ModelCloud | None = None) -> Scene:
    """Sample a scene: uniform distance in diameters, uniform rotation,
    and a viewing direction that keeps the whole object in frame (unless
    truncation is allowed)."""
    rng = np.random.default_rng(rng)
    cloud = cloud or default_model_cloud(params.diameter)
    K = CameraIntrinsics.from_fov(params.fov_deg, params.image_size)
    keypoints = box_corners(cloud.points)
    # every cloud point lies inside the box, so the corner radius bounds them all
    circumradius = float(np.linalg.norm(keypoints, axis=1).max())

    q = rng.normal(size=4)
    lo, hi = params.depth_range_diameters
    distance = cloud.diameter * rng.uniform(lo, hi)
    half_fov = np.deg2rad(params.fov_deg) / 2.0
    angular_radius = np.arcsin(min(1.0, circumradius / distance))
    if params.allow_truncation:
        psi_max = half_fov
    else:
        psi_max = max(0.0, half_fov - angular_radius)
    cos_psi = rng.uniform(np.cos(psi_max), 1.0)
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    sin_psi = np.sqrt(max(0.0, 1.0 - cos_psi * cos_psi))
    t = distance * np.array([sin_psi * np.cos(azimuth), sin_psi * np.sin(azimuth), cos_psi])
    pose = Pose(q, t)

    uv = project(K, pose, keypoints)
    size = float(max(uv[:, 0].max() - uv[:, 0].min(), uv[:, 1].max() - uv[:, 1].min()))
    return Scene(
        camera=K,
        gt_pose=pose,
        keypoints=keypoints,
        cloud=cloud,
        depth_over_d=float(distance / cloud.diameter),
        bbox_size_px=size,
    )


def synthesize_prediction(scene: Scene, spec: PyramidSpec, noise: NoiseModel, rng
                          ) -> PyramidPrediction:
    """Surrogate network output for a scene.

    In-mask cells carry objectness shaped by the level's scale affinity
    and offsets encoding the true projections plus level-dependent
    Gaussian noise; a fraction are replaced by gross outliers.  The mask
    is the convex hull of the projected keypoints (augmented with the
    cells containing the keypoints, so very small objects keep at least
    one active cell at the fine levels).
    """
    rng = np.random.default_rng(rng)
    w, h = spec.image_size
    try:
        uv_true = project(scene.camera, scene.gt_pose, scene.keypoints)
    except NonPositiveDepthError as exc:
        raise ObjectNotVisibleError("object lies at or behind the camera plane") from exc
    hull = _convex_hull(uv_true)
    if (uv_true[:, 0].max() < 0 or uv_true[:, 0].min() > w
            or uv_true[:, 1].max() < 0 or uv_true[:, 1].min() > h):
        raise ObjectNotVisibleError("projected bounding box falls entirely outside the image")

    size = scene.bbox_size_px
    finest_stride = min(lv.stride for lv in spec.levels)
    objectness: list[np.ndarray] = []
    offsets: list[np.ndarray] = []
    any_active = False
    for lv in spec.levels:
        rows, cols = spec.grid_shape(lv.index)
        centers = cell_centers(spec, lv.index)
        mask = points_in_hull(centers.reshape(-1, 2), hull).reshape(rows, cols)
        for u, v in uv_true:
            r, c = int(v // lv.stride), int(u // lv.stride)
            if 0 <= r < rows and 0 <= c < cols:
                mask[r, c] = True

        delta = abs(np.log2(size / lv.reference_size)) if size > 0 else np.inf
        sigma = noise.sigma_strides(lv.stride, finest_stride, delta)

        obj = rng.uniform(0.0, noise.background_objectness_max, size=(rows, cols))
        off = np.zeros((rows, cols, NUM_KEYPOINTS, 2))
        cells = np.argwhere(mask)
        n_mask = cells.shape[0]
        if n_mask:
            any_active = True
            score = noise.objectness_base - noise.objectness_falloff * delta * delta
            jitter = rng.normal(0.0, noise.objectness_jitter, size=n_mask) \
                if noise.objectness_jitter > 0 else np.zeros(n_mask)
            cell_scores = score + jitter

            enc = (uv_true[None, :, :] - centers[cells[:, 0], cells[:, 1]][:, None, :]) / lv.stride
            if sigma > 0:
                enc = enc + rng.normal(0.0, sigma, size=enc.shape)
            if noise.outlier_rate > 0:
                bad = rng.random(n_mask) < noise.outlier_rate
                if bad.any():
                    n_bad = int(bad.sum())
                    junk = np.empty((n_bad, NUM_KEYPOINTS, 2))
                    junk[:, :, 0] = rng.uniform(0.0, w, size=(n_bad, NUM_KEYPOINTS))
                    junk[:, :, 1] = rng.uniform(0.0, h, size=(n_bad, NUM_KEYPOINTS))
                    enc[bad] = (junk - centers[cells[bad, 0], cells[bad, 1]][:, None, :]) / lv.stride
                    cell_scores = cell_scores.copy()
                    cell_scores[bad] *= rng.uniform(0.3, 0.8, size=n_bad)
            obj[cells[:, 0], cells[:, 1]] = np.clip(cell_scores, 0.0, 1.0)
            off[cells[:, 0], cells[:, 1]] = enc
        objectness.append(obj)
        offsets.append(off)
    if not any_active:
        raise ObjectNotVisibleError("object covers no cell at any pyramid level")
    return PyramidPrediction(spec=spec, objectness=tuple(objectness), offsets=tuple(offsets))


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BenchmarkRow:
    scene_id: int
    depth_over_d: float
    band: str
    method: str
    adi_error: float
    success: bool


@dataclass(eq=False)
class BenchmarkResult:
    rows: list[BenchmarkRow]
    diameter: float
    bands: DepthBands
    methods: tuple[str, ...]

    def errors(self, method: str, band: str | None = None) -> np.ndarray:
        return np.array([
            r.adi_error for r in self.rows
            if r.method == method and (band is None or r.band == band)
        ])

    def accuracy(self, method: str, band: str | None = None,
                 threshold_frac: float = 0.1) -> float:
        return adi_accuracy(self.errors(method, band), self.diameter, threshold_frac)

    def to_csv(self, fileobj) -> None:
        fileobj.write("scene_id,depth_band,method,adi_error,success\n")
        for r in self.rows:
            fileobj.write(f"{r.scene_id},{r.band},{r.method},{r.adi_error!r},{int(r.success)}\n")

    def aggregate_csv(self, fileobj, threshold_frac: float = 0.1) -> None:
        fileobj.write("depth_band,method,adi_accuracy,count\n")
        band_names = list(self.bands.names) + ["all"]
        for band in band_names:
            sel = None if band == "all" else band
            for method in self.methods:
                errs = self.errors(method, sel)
                acc = adi_accuracy(errs, self.diameter, threshold_frac) if errs.size else 0.0
                fileobj.write(f"{band},{method},{acc!r},{errs.size}\n")


def _scene_seed_sequences(master_seed: int, scene_id: int):
    ss = np.random.SeedSequence([int(master_seed), int(scene_id)])
    return ss.spawn(3)


def benchmark_scene(scene_id: int, master_seed: int, scenario: ScenarioParams,
                    noise: NoiseModel, fusion_params: FusionParams,
                    spec: PyramidSpec, cloud: ModelCloud | None = None
                    ) -> list[BenchmarkRow]:
    """Evaluate one seeded scene: fused pose plus per-level diagnostics."""
    scene_seq, synth_seq, fuse_seq = _scene_seed_sequences(master_seed, scene_id)
    scene = generate_scene(scenario, scene_seq, cloud)
    bands = DepthBands()
    band = bands.band_of(scene.depth_over_d) or "out_of_range"
    methods = ["fused"] + [f"L{lv.index}" for lv in spec.levels]

    def row(method: str, result) -> BenchmarkRow:
        if result is None:
            return BenchmarkRow(scene_id, scene.depth_over_d, band, method, np.inf, False)
        err = adi_distance(scene.gt_pose, result.pose, scene.cloud)
        return BenchmarkRow(scene_id, scene.depth_over_d, band, method, err, True)

    try:
        pred = synthesize_prediction(scene, spec, noise, synth_seq)
    except ObjectNotVisibleError:
        return [BenchmarkRow(scene_id, scene.depth_over_d, band, m, np.inf, False)
                for m in methods]
    fused = try_fuse(pred, scene.keypoints, scene.camera, fusion_params, seed=fuse_seq)
    rows = [row("fused", fused.result if fused.success else None)]
    for diag in fused.per_level:
        rows.append(row(f"L{diag.level}", diag.result if diag.failure is None else None))
    return rows


def _benchmark_scene_star(args) -> list[BenchmarkRow]:
    return benchmark_scene(*args)


def run_benchmark(n_scenes: int, scenario: ScenarioParams | None = None,
                  noise: NoiseModel | None = None,
                  fusion_params: FusionParams | None = None,
                  seed: int = 0, spec: PyramidSpec | None = None,
                  cloud: ModelCloud | None = None, workers: int = 1
                  ) -> BenchmarkResult:
    """Seeded benchmark over generated scenes.

    Per-scene seeds derive from (seed, scene_id), so sharding across
    workers cannot change any result; rows are ordered by scene id.
    """
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    scenario = scenario or ScenarioParams()
    noise = noise or NoiseModel()
    fusion_params = fusion_params or FusionParams()
    spec = spec or PyramidSpec.default(scenario.image_size)
    cloud = cloud or default_model_cloud(scenario.diameter)
    args = [(i, seed, scenario, noise, fusion_params, spec, cloud) for i in range(n_scenes)]
    if workers > 1:
        import multiprocessing

        with multiprocessing.get_context("fork").Pool(workers) as pool:
            per_scene = pool.map(_benchmark_scene_star, args, chunksize=max(1, n_scenes // (4 * workers)))
    else:
        per_scene = [_benchmark_scene_star(a) for a in args]
    rows = [r for rows_i in per_scene for r in rows_i]
    methods = tuple(["fused"] + [f"L{lv.index}" for lv in spec.levels])
    return BenchmarkResult(rows=rows, diameter=cloud.diameter, bands=DepthBands(), methods=methods)


def run_benchmark_from_records(records, fusion_params: FusionParams | None = None,
                               seed: int = 0) -> BenchmarkResult:
    """Benchmark over saved scene records (the `simulate` JSONL format)."""
    fusion_params = fusion_params or FusionParams()
    bands = DepthBands()
    rows: list[BenchmarkRow] = []
    diameter = None
    methods: tuple[str, ...] | None = None
    for rec in records:
        scene_id, scene, pred = scene_from_record(rec)
        diameter = scene.cloud.diameter
        band = bands.band_of(scene.depth_over_d) or "out_of_range"
        fuse_seq = np.random.SeedSequence([int(seed), scene_id])
        fused = try_fuse(pred, scene.keypoints, scene.camera, fusion_params, seed=fuse_seq)
        if methods is None:
            methods = tuple(["fused"] + [f"L{d.level}" for d in fused.per_level])

        def to_row(method, res):
            if res is None:
                return BenchmarkRow(scene_id, scene.depth_over_d, band, method, np.inf, False)
            err = adi_distance(scene.gt_pose, res.pose, scene.cloud)
            return BenchmarkRow(scene_id, scene.depth_over_d, band, method, err, True)

        rows.append(to_row("fused", fused.result if fused.success else None))
        for diag in fused.per_level:
            rows.append(to_row(f"L{diag.level}", diag.result if diag.failure is None else None))
    if diameter is None:
        raise ValueError("no scene records supplied")
    return BenchmarkResult(rows=rows, diameter=diameter, bands=bands, methods=methods)


# ---------------------------------------------------------------------------
# Scene serialization (JSON-lines records produced by `simulate`)
# ---------------------------------------------------------------------------

def scene_record(scene_id: int, scene: Scene, spec: PyramidSpec,
                 pred: PyramidPrediction) -> dict:
    return {
        "schema": "widepose.scene/1",
        "scene_id": scene_id,
        "camera": scene.camera.to_dict(),
        "gt_pose": scene.gt_pose.to_dict(),
        "keypoints": scene.keypoints.tolist(),
        "model_points": scene.cloud.points.tolist(),
        "diameter": scene.cloud.diameter,
        "depth_over_d": scene.depth_over_d,
        "bbox_size_px": scene.bbox_size_px,
        "prediction": pred.to_dict(),
    }


def scene_from_record(d: dict) -> tuple[int, Scene, PyramidPrediction]:
    if d.get("schema") != "widepose.scene/1":
        raise ValueError(f"unsupported scene schema: {d.get('schema')!r}")
    pred = PyramidPrediction.from_dict(d["prediction"])
    cloud = ModelCloud.from_points(np.asarray(d["model_points"], dtype=np.float64))
    scene = Scene(
        camera=CameraIntrinsics.from_dict(d["camera"]),
        gt_pose=Pose.from_dict(d["gt_pose"]),
        keypoints=np.asarray(d["keypoints"], dtype=np.float64),
        cloud=cloud,
        depth_over_d=float(d["depth_over_d"]),
        bbox_size_px=float(d["bbox_size_px"]),
    )
    return int(d["scene_id"]), scene, pred
