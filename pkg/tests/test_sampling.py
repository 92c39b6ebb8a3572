import numpy as np
import pytest

from widepose.errors import NonPositiveSizeError
from widepose.grid import PyramidLevel, PyramidSpec, SegmentationMask
from widepose.sampling import (
    SamplingParams,
    SamplingPlan,
    level_scale_deltas,
    realize_counts,
    round_counts,
    sample_counts,
    select_cells,
)


def oracle_counts(size, concentration, refs=(16, 32, 64, 128, 256), alpha=10):
    """Independent high-precision evaluation of the softmax counts."""
    import mpmath

    mpmath.mp.dps = 50
    deltas = [abs(mpmath.log(mpmath.mpf(size) / s, 2)) for s in refs]
    ws = [mpmath.exp(-concentration * d * d) for d in deltas]
    total = sum(ws)
    return [float(alpha * w / total) for w in ws]


def test_deltas_for_size_64():
    assert np.allclose(level_scale_deltas(64.0, SamplingParams()), [2, 1, 0, 1, 2])


def test_delta_zero_at_reference_sizes():
    params = SamplingParams()
    for k, s in enumerate(params.reference_sizes):
        assert level_scale_deltas(s, params)[k] == 0.0


def test_nonpositive_size_raises():
    with pytest.raises(NonPositiveSizeError):
        level_scale_deltas(0.0, SamplingParams())
    with pytest.raises(NonPositiveSizeError):
        sample_counts(-3.0, SamplingParams())


def test_zero_concentration_is_uniform():
    plan = sample_counts(37.3, SamplingParams(concentration=0.0))
    assert np.allclose(plan.expected, 2.0, atol=1e-12)


def test_unit_concentration_size_64_matches_oracle():
    plan = sample_counts(64.0, SamplingParams(concentration=1.0))
    assert np.allclose(plan.expected, oracle_counts(64, 1.0), atol=1e-12)
    frozen = [0.1033, 2.0756, 5.6421, 2.0756, 0.1033]
    assert np.allclose(plan.expected, frozen, atol=1e-3)


def test_large_concentration_hard_assigns():
    plan = sample_counts(32.0, SamplingParams(concentration=30.0))
    assert np.allclose(plan.expected, [0, 10, 0, 0, 0], atol=1e-9)
    params = SamplingParams(concentration=20.0)
    for k, s in enumerate(params.reference_sizes):
        plan = sample_counts(float(s), params)
        hard = np.zeros(5)
        hard[k] = 10.0
        assert np.allclose(plan.expected, hard, atol=1e-6)


def test_budget_conserved_over_random_inputs():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        size = float(rng.uniform(1.0, 1000.0))
        lam = float(rng.uniform(0.0, 50.0))
        plan = sample_counts(size, SamplingParams(concentration=lam))
        assert abs(plan.expected.sum() - 10.0) < 1e-9
        assert np.all(plan.expected >= 0)


def test_symmetry_around_middle_level():
    plan = sample_counts(64.0, SamplingParams(concentration=2.5))
    assert np.allclose(plan.expected, plan.expected[::-1], atol=1e-12)


def test_counts_monotone_in_concentration():
    last = 0.0
    for lam in np.linspace(0.0, 40.0, 30):
        n3 = sample_counts(64.0, SamplingParams(concentration=float(lam))).expected[2]
        assert n3 >= last - 1e-12
        last = n3
    assert last > 10.0 - 1e-6


def test_realize_integer_plan_is_exact():
    plan = SamplingPlan(expected=np.array([2.0, 2.0, 2.0, 2.0, 2.0]))
    for seed in range(5):
        assert np.array_equal(realize_counts(plan, seed).realized, [2, 2, 2, 2, 2])


def test_realize_zero_stays_zero():
    plan = SamplingPlan(expected=np.array([0.0]))
    assert realize_counts(plan, 0).realized[0] == 0


def test_realize_is_unbiased():
    plan = SamplingPlan(expected=np.array([5.6421]))
    rng = np.random.default_rng(42)
    draws = np.array([realize_counts(plan, rng).realized[0] for _ in range(100_000)])
    assert set(np.unique(draws)) <= {5, 6}
    assert abs(draws.mean() - 5.6421) < 0.01


def test_round_counts_half_up():
    plan = SamplingPlan(expected=np.array([0.4, 0.5, 2.4999, 5.6421, 9.5]))
    assert np.array_equal(round_counts(plan).realized, [0, 1, 2, 6, 10])


def _four_cell_mask():
    spec = PyramidSpec((16, 16), (PyramidLevel(1, 8, 16.0),))
    return SegmentationMask(spec=spec, masks=(np.ones((2, 2), dtype=bool),))


def test_select_all_when_budget_covers_mask():
    mask = _four_cell_mask()
    plan = SamplingPlan(expected=np.array([4.0]), realized=np.array([4]))
    cells = select_cells(mask, plan, 0)[0]
    assert sorted(map(tuple, cells)) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    plan = SamplingPlan(expected=np.array([9.0]), realized=np.array([9]))
    assert len(select_cells(mask, plan, 0)[0]) == 4  # clamped to the mask


def test_select_zero_gives_empty():
    mask = _four_cell_mask()
    plan = SamplingPlan(expected=np.array([0.0]), realized=np.array([0]))
    assert select_cells(mask, plan, 0)[0].shape == (0, 2)


def test_select_single_cell_is_uniform():
    mask = _four_cell_mask()
    plan = SamplingPlan(expected=np.array([1.0]), realized=np.array([1]))
    rng = np.random.default_rng(12345)
    counts = {}
    for _ in range(10_000):
        cell = tuple(select_cells(mask, plan, rng)[0][0])
        counts[cell] = counts.get(cell, 0) + 1
    assert set(counts) == {(0, 0), (0, 1), (1, 0), (1, 1)}
    for v in counts.values():
        assert abs(v - 2500) <= 150


def test_select_is_deterministic_per_seed():
    mask = _four_cell_mask()
    plan = SamplingPlan(expected=np.array([2.0]), realized=np.array([2]))
    a = select_cells(mask, plan, 99)[0]
    b = select_cells(mask, plan, 99)[0]
    assert np.array_equal(a, b)


def test_params_validation():
    with pytest.raises(ValueError):
        SamplingParams(max_samples=0.0)
    with pytest.raises(ValueError):
        SamplingParams(concentration=-0.1)
    with pytest.raises(ValueError):
        SamplingParams(reference_sizes=(32.0, 16.0))
