"""Inference-time multi-scale fusion.

Estimate the object's 2D size from the most confident cell, spread the
sample budget over the pyramid levels accordingly, pool the decoded
keypoint predictions of the top-objectness cells across all levels into
one correspondence set, and solve it robustly with RANSAC+PnP.

Per-level diagnostic poses run the same pipeline restricted to a single
level: the fused plan's correspondences filtered to that level, solved
with identical RANSAC parameters.  Levels that receive no budget (or
have no cell above the threshold) fail their diagnostic, which is the
expected behavior far outside a level's scale range.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoConsensusError, NoDetectionError
from .geometry import CameraIntrinsics
from .grid import NUM_KEYPOINTS, PyramidPrediction, cell_centers
from .pnp import Correspondence, PnpResult, RansacParams, pnp_ransac
from .sampling import SamplingParams, realize_counts, round_counts, sample_counts


@dataclass(frozen=True, eq=False)
class FusionParams:
    """Threshold and sub-module parameters for multi-scale fusion."""

    objectness_threshold: float = 0.3
    sampling: SamplingParams = field(default_factory=SamplingParams)
    ransac: RansacParams = field(default_factory=RansacParams)
    stochastic_counts: bool = False
    size_from_confident_mean: bool = False
    objectness_as_weight: bool = False

    def __post_init__(self):
        if not 0.0 < self.objectness_threshold < 1.0:
            raise ValueError("objectness_threshold must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class LevelDiagnostic:
    """Standalone solve over one level's share of the fused correspondences."""

    level: int
    result: PnpResult | None
    failure: str | None
    cells: np.ndarray  # (m, 2) cells contributed by this level


@dataclass(frozen=True, eq=False)
class FusionResult:
    result: PnpResult | None
    failure: str | None
    estimated_size: float | None
    anchor: tuple[int, int, int] | None  # (level, row, col) of the size estimate
    contributed_cells: dict[int, np.ndarray]
    num_correspondences: int
    per_level: tuple[LevelDiagnostic, ...]

    @property
    def success(self) -> bool:
        return self.failure is None

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "failure": self.failure,
            "estimated_size_px": None if self.estimated_size is None else float(self.estimated_size),
            "anchor": None if self.anchor is None else [int(x) for x in self.anchor],
            "num_correspondences": self.num_correspondences,
            "pose": None if self.result is None else self.result.to_dict(),
            "contributed_cells": {
                str(k): v.tolist() for k, v in self.contributed_cells.items()
            },
            "per_level": [
                {
                    "level": d.level,
                    "success": d.failure is None,
                    "failure": d.failure,
                    "cells": d.cells.tolist(),
                    "pose": None if d.result is None else d.result.to_dict(),
                }
                for d in self.per_level
            ],
        }


def _decoded_cell_size(pred: PyramidPrediction, pos: int, r: int, c: int) -> float:
    lv = pred.spec.levels[pos]
    center = np.array([(c + 0.5) * lv.stride, (r + 0.5) * lv.stride])
    pts = center + pred.offsets[pos][r, c] * lv.stride
    w = float(pts[:, 0].max() - pts[:, 0].min())
    h = float(pts[:, 1].max() - pts[:, 1].min())
    return max(w, h)


def estimate_size(pred: PyramidPrediction, threshold: float = 0.3,
                  from_confident_mean: bool = False) -> tuple[float, tuple[int, int, int]]:
    """Object 2D size from the decoded box corners of the most confident cell.

    Returns (size, (level, row, col)).  The optional averaged variant
    pools the per-cell sizes of every cell above the threshold.
    """
    best = None  # (objectness, pos, r, c)
    for pos, obj in enumerate(pred.objectness):
        if obj.size == 0:
            continue
        flat = int(np.argmax(obj))
        r, c = divmod(flat, obj.shape[1])
        score = float(obj[r, c])
        if score >= threshold and (best is None or score > best[0]):
            best = (score, pos, r, c)
    if best is None:
        raise NoDetectionError(f"no cell with objectness >= {threshold}")
    _, pos, r, c = best
    anchor = (pred.spec.levels[pos].index, r, c)

    if from_confident_mean:
        sizes = []
        for p, obj in enumerate(pred.objectness):
            for rr, cc in np.argwhere(obj >= threshold):
                sizes.append(_decoded_cell_size(pred, p, rr, cc))
        size = float(np.mean(sizes))
    else:
        size = _decoded_cell_size(pred, pos, r, c)
    if size <= 0:
        raise NoDetectionError("most confident cell decodes to a degenerate (zero-size) box")
    return size, anchor


def gather_correspondences(pred: PyramidPrediction, size: float, keypoints,
                           params: FusionParams, rng=None
                           ) -> tuple[list[Correspondence], dict[int, np.ndarray]]:
    """Top-objectness cells per level, decoded into 3D-to-2D correspondences.

    The per-level cell budget comes from the sampling distribution for
    the estimated size; only cells at or above the objectness threshold
    are eligible.  Every selected cell contributes one correspondence per
    keypoint, so the total count is NUM_KEYPOINTS * sum(cells).
    """
    keypoints = np.asarray(keypoints, dtype=np.float64).reshape(NUM_KEYPOINTS, 3)
    sampling = SamplingParams(
        max_samples=params.sampling.max_samples,
        concentration=params.sampling.concentration,
        reference_sizes=pred.spec.reference_sizes(),
    )
    plan = sample_counts(size, sampling)
    if params.stochastic_counts:
        plan = realize_counts(plan, rng)
    else:
        plan = round_counts(plan)

    corrs: list[Correspondence] = []
    cells_by_level: dict[int, np.ndarray] = {}
    for pos, (lv, n_cells) in enumerate(zip(pred.spec.levels, plan.realized)):
        obj = pred.objectness[pos]
        eligible = np.argwhere(obj >= params.objectness_threshold)
        if eligible.shape[0] == 0 or n_cells == 0:
            cells_by_level[lv.index] = np.empty((0, 2), dtype=np.int64)
            continue
        scores = obj[eligible[:, 0], eligible[:, 1]]
        order = np.argsort(-scores, kind="stable")
        take = eligible[order[: int(min(n_cells, eligible.shape[0]))]]
        cells_by_level[lv.index] = take
        centers = cell_centers(pred.spec, lv.index)
        for r, c in take:
            uv = centers[r, c] + pred.offsets[pos][r, c] * lv.stride
            weight_cell = float(obj[r, c]) if params.objectness_as_weight else 1.0
            for i in range(NUM_KEYPOINTS):
                corrs.append(Correspondence(keypoints[i], uv[i], weight_cell))
    return corrs, cells_by_level


def _seed_for(seed, salt: int):
    base = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.SeedSequence(entropy=base.entropy, spawn_key=base.spawn_key + (salt,))


def _ransac_with_seed(params: FusionParams, corrs, K: CameraIntrinsics, seed, salt: int):
    ransac = RansacParams(
        max_iterations=params.ransac.max_iterations,
        inlier_threshold_px=params.ransac.inlier_threshold_px,
        min_sample_size=params.ransac.min_sample_size,
        confidence=params.ransac.confidence,
        rng_seed=_seed_for(seed, salt),
    )
    try:
        return pnp_ransac(corrs, K, ransac), None
    except NoConsensusError:
        return None, "no_consensus"


def try_fuse(pred: PyramidPrediction, keypoints, K: CameraIntrinsics,
             params: FusionParams | None = None, seed=0,
             with_level_diagnostics: bool = True) -> FusionResult:
    """Multi-scale fusion that reports failures in the result instead of
    raising; see fuse() for the raising variant."""
    params = params or FusionParams()
    empty_levels = tuple(
        LevelDiagnostic(level=lv.index, result=None, failure="no_detection",
                        cells=np.empty((0, 2), dtype=np.int64))
        for lv in pred.spec.levels
    ) if with_level_diagnostics else ()
    try:
        size, anchor = estimate_size(pred, params.objectness_threshold,
                                     params.size_from_confident_mean)
    except NoDetectionError:
        return FusionResult(result=None, failure="no_detection", estimated_size=None,
                            anchor=None, contributed_cells={}, num_correspondences=0,
                            per_level=empty_levels)
    count_rng = _seed_for(seed, 1000)
    corrs, cells = gather_correspondences(pred, size, keypoints, params, rng=count_rng)
    result, failure = _ransac_with_seed(params, corrs, K, seed, 0)

    per_level: list[LevelDiagnostic] = []
    if with_level_diagnostics:
        # group the fused correspondences by originating level (gather order)
        start = 0
        by_level: dict[int, list[Correspondence]] = {}
        for lv in pred.spec.levels:
            n = cells[lv.index].shape[0] * NUM_KEYPOINTS
            by_level[lv.index] = corrs[start:start + n]
            start += n
        for lv in pred.spec.levels:
            level_corrs = by_level[lv.index]
            if not level_corrs:
                per_level.append(LevelDiagnostic(level=lv.index, result=None,
                                                 failure="no_detection",
                                                 cells=cells[lv.index]))
                continue
            r_k, fail_k = _ransac_with_seed(params, level_corrs, K, seed, lv.index)
            per_level.append(LevelDiagnostic(level=lv.index, result=r_k, failure=fail_k,
                                             cells=cells[lv.index]))
    return FusionResult(
        result=result,
        failure=failure,
        estimated_size=size,
        anchor=anchor,
        contributed_cells=cells,
        num_correspondences=len(corrs),
        per_level=tuple(per_level),
    )


def fuse(pred: PyramidPrediction, keypoints, K: CameraIntrinsics,
         params: FusionParams | None = None, seed=0,
         with_level_diagnostics: bool = True) -> FusionResult:
    """Size estimation, cross-level correspondence gathering, and robust
    pose solving; raises NoDetectionError or NoConsensusError when the
    fused solve fails."""
    out = try_fuse(pred, keypoints, K, params, seed, with_level_diagnostics)
    if out.failure == "no_detection":
        raise NoDetectionError("no cell above the objectness threshold")
    if out.failure == "no_consensus":
        raise NoConsensusError("fused correspondence set yielded no consensus")
    return out
