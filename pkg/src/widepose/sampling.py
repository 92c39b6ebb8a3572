"""Ensemble-aware distribution of a sample budget across pyramid levels.

Every level receives a share of the per-instance budget according to a
softmax over the squared log2 mismatch between the object's 2D size and
the level's reference size.  Zero concentration spreads the budget
uniformly; large concentration collapses onto the best-matching level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveSizeError
from .grid import DEFAULT_REFERENCE_SIZES, SegmentationMask

HARD_ASSIGNMENT_CONCENTRATION = 20.0


@dataclass(frozen=True, eq=False)
class SamplingParams:
    """Budget and shape of the per-level sampling distribution.

    max_samples is the total budget (the per-level maximum in the hard
    limit); concentration >= 0 controls how sharply the budget focuses on
    the levels whose reference size matches the object size.
    """

    max_samples: float = 10.0
    concentration: float = 1.0
    reference_sizes: tuple[float, ...] = DEFAULT_REFERENCE_SIZES

    def __post_init__(self):
        if self.max_samples <= 0:
            raise ValueError("max_samples must be positive")
        if self.concentration < 0:
            raise ValueError("concentration must be >= 0")
        refs = tuple(float(s) for s in self.reference_sizes)
        if not refs or any(s <= 0 for s in refs):
            raise ValueError("reference sizes must be positive")
        if list(refs) != sorted(refs) or len(set(refs)) != len(refs):
            raise ValueError("reference sizes must be strictly increasing")
        object.__setattr__(self, "reference_sizes", refs)


@dataclass(frozen=True, eq=False)
class SamplingPlan:
    """Per-level sample counts: the real-valued distribution plus, once
    realized, the integer counts actually drawn."""

    expected: np.ndarray
    realized: np.ndarray | None = None

    def __post_init__(self):
        exp = np.asarray(self.expected, dtype=np.float64)
        if np.any(exp < 0) or not np.all(np.isfinite(exp)):
            raise ValueError("expected counts must be finite and >= 0")
        object.__setattr__(self, "expected", exp)
        if self.realized is not None:
            rea = np.asarray(self.realized, dtype=np.int64)
            if rea.shape != exp.shape or np.any(rea < 0):
                raise ValueError("realized counts must be >= 0 and match expected in shape")
            object.__setattr__(self, "realized", rea)


def level_scale_deltas(size: float, params: SamplingParams) -> np.ndarray:
    """Absolute log2 ratio between the object size and each reference size."""
    if not size > 0:
        raise NonPositiveSizeError(f"object size must be positive, got {size!r}")
    refs = np.asarray(params.reference_sizes)
    return np.abs(np.log2(size / refs))


def sample_counts(size: float, params: SamplingParams) -> SamplingPlan:
    """Softmax-weighted per-level counts summing to the budget."""
    deltas = level_scale_deltas(size, params)
    d2 = deltas * deltas
    # subtract the minimum so the softmax stays finite for any concentration
    w = np.exp(-params.concentration * (d2 - d2.min()))
    return SamplingPlan(expected=params.max_samples * w / w.sum())


def realize_counts(plan: SamplingPlan, rng) -> SamplingPlan:
    """Unbiased stochastic rounding: floor plus a Bernoulli on the fraction."""
    rng = np.random.default_rng(rng)
    base = np.floor(plan.expected)
    frac = plan.expected - base
    extra = rng.random(plan.expected.shape) < frac
    return SamplingPlan(expected=plan.expected, realized=(base + extra).astype(np.int64))


def round_counts(plan: SamplingPlan) -> SamplingPlan:
    """Deterministic half-up rounding, for reproducible inference."""
    return SamplingPlan(expected=plan.expected, realized=np.floor(plan.expected + 0.5).astype(np.int64))


def select_cells(mask: SegmentationMask, plan: SamplingPlan, rng) -> list[np.ndarray]:
    """Uniformly sample, per level, `realized` distinct masked cells.

    Levels whose mask holds fewer cells than requested contribute all of
    them; this clamping is defined behavior, not an error.
    """
    if plan.realized is None:
        raise ValueError("plan has no realized counts; call realize_counts or round_counts first")
    if len(plan.realized) != len(mask.spec.levels):
        raise ValueError("plan length must match the mask's level count")
    rng = np.random.default_rng(rng)
    out = []
    for lv, n in zip(mask.spec.levels, plan.realized):
        cells = mask.cells(lv.index)
        n = int(min(n, cells.shape[0]))
        if n == 0:
            out.append(np.empty((0, 2), dtype=np.int64))
        elif n == cells.shape[0]:
            out.append(cells.copy())
        else:
            pick = rng.choice(cells.shape[0], size=n, replace=False)
            out.append(cells[pick])
    return out
