import io

import numpy as np
import pytest

from conftest import random_pose
from widepose.errors import DegenerateConfigurationError, NoConsensusError, NonPositiveDepthError
from widepose.geometry import CameraIntrinsics, Pose, project, quat_angle
from widepose.pnp import (
    Correspondence,
    PnpResult,
    RansacParams,
    pnp_dlt,
    pnp_ransac,
    pnp_refine,
    read_correspondences_jsonl,
    write_correspondences_jsonl,
)
from widepose.simulator import ScenarioParams, default_model_cloud, generate_scene

K = CameraIntrinsics(fx=214.8, fy=214.8, cx=256.0, cy=256.0)

CUBE = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)


def make_corrs(points, pose, K=K, noise=0.0, rng=None):
    uv = project(K, pose, points)
    if noise:
        uv = uv + rng.normal(scale=noise, size=uv.shape)
    return [Correspondence(p, u) for p, u in zip(points, uv)]


def pose_errors(gt: Pose, est: Pose):
    rot = quat_angle(gt.quaternion, est.quaternion)
    trans = np.linalg.norm(gt.translation - est.translation) / np.linalg.norm(gt.translation)
    return rot, trans


def test_dlt_exact_on_noiseless_cube():
    pose = Pose(np.array([1.0, 0, 0, 0]), [0, 0, 5.0])
    est = pnp_dlt(make_corrs(CUBE, pose), K)
    rot, trans = pose_errors(pose, est)
    assert rot < 1e-6 and trans < 1e-6


def test_dlt_exact_on_random_scenes():
    rng = np.random.default_rng(0)
    cloud = default_model_cloud()
    for sid in range(100):
        scene = generate_scene(ScenarioParams(), np.random.SeedSequence([2, sid]), cloud)
        corrs = make_corrs(scene.keypoints, scene.gt_pose, scene.camera)
        est = pnp_dlt(corrs, scene.camera)
        rot, trans = pose_errors(scene.gt_pose, est)
        assert rot < 1e-6 and trans < 1e-6


def test_dlt_rejects_collinear_configuration():
    pts = np.array([[i, 0.0, 0.0] for i in range(8)])
    pose = Pose(np.array([1.0, 0, 0, 0]), [-3.5, 0, 10.0])
    with pytest.raises(DegenerateConfigurationError):
        pnp_dlt(make_corrs(pts, pose), K)


def test_dlt_needs_six_points():
    pose = Pose(np.array([1.0, 0, 0, 0]), [0, 0, 5.0])
    with pytest.raises(DegenerateConfigurationError):
        pnp_dlt(make_corrs(CUBE[:5], pose), K)


def test_refine_at_ground_truth_returns_unchanged():
    pose = Pose(np.array([0.9, 0.1, -0.2, 0.3]), [0.2, -0.1, 6.0])
    res = pnp_refine(pose, make_corrs(CUBE, pose), K)
    assert res.converged
    assert res.iterations == 0
    assert quat_angle(pose.quaternion, res.pose.quaternion) < 1e-10
    assert np.linalg.norm(pose.translation - res.pose.translation) < 1e-10


def test_refine_recovers_from_perturbation():
    rng = np.random.default_rng(9)
    for _ in range(20):
        pose = random_pose(rng)
        corrs = make_corrs(CUBE * 0.3, pose)
        nudge = Pose.from_axis_angle(rng.normal(size=3), np.deg2rad(5.0),
                                     0.1 * np.linalg.norm(pose.translation) * rng.normal(size=3) / 3)
        start = nudge.compose(pose)
        res = pnp_refine(start, corrs, K)
        rot, trans = pose_errors(pose, res.pose)
        assert rot < 1e-8 and trans < 1e-8
        assert res.final_cost <= res.initial_cost + 1e-18


def test_refine_rejects_bad_start():
    pose = Pose(np.array([1.0, 0, 0, 0]), [0, 0, 0.5])  # cube straddles the camera plane
    corrs = [Correspondence(p, [0.0, 0.0]) for p in CUBE]
    with pytest.raises(NonPositiveDepthError):
        pnp_refine(pose, corrs, K)


def test_refine_beats_dlt_under_noise():
    rng = np.random.default_rng(15)
    improved = 0
    for _ in range(20):
        pose = random_pose(rng)
        corrs = make_corrs(CUBE * 0.3, pose, noise=1.0, rng=rng)
        dlt = pnp_dlt(corrs, K)
        res = pnp_refine(dlt, corrs, K)

        def mean_err(p):
            uv_est = project(K, p, CUBE * 0.3)
            uv_obs = np.array([c.image_point for c in corrs])
            return float(np.mean(np.linalg.norm(uv_est - uv_obs, axis=1)))

        assert mean_err(res.pose) <= mean_err(dlt) + 1e-9
        improved += mean_err(res.pose) < mean_err(dlt) - 1e-12
    assert improved >= 15  # refinement genuinely moves the estimate


def test_ransac_all_inliers_noiseless():
    pose = Pose(np.array([0.8, -0.1, 0.2, 0.1]), [0.1, 0.2, 6.0])
    result = pnp_ransac(make_corrs(CUBE, pose), K, RansacParams(rng_seed=1))
    rot, trans = pose_errors(pose, result.pose)
    assert rot < 1e-6 and trans < 1e-6
    assert result.inlier_flags.all()
    assert result.num_hypotheses == 1  # confidence reached immediately


def test_ransac_with_outliers_flags_true_inliers():
    rng = np.random.default_rng(77)
    pose = random_pose(rng)
    pts = rng.uniform(-0.5, 0.5, size=(24, 3))
    corrs = make_corrs(pts[:16], pose, noise=0.5, rng=rng)
    for p in pts[16:]:
        corrs.append(Correspondence(p, rng.uniform(0, 512, size=2)))
    result = pnp_ransac(corrs, K, RansacParams(rng_seed=3))
    rot, _ = pose_errors(pose, result.pose)
    assert np.degrees(rot) < 1.0
    assert result.inlier_flags[:16].all()


def test_ransac_no_consensus_on_inconsistent_quad():
    rng = np.random.default_rng(5)
    corrs = [Correspondence(rng.uniform(-1, 1, size=3), rng.uniform(0, 512, size=2))
             for _ in range(4)]
    with pytest.raises(NoConsensusError):
        pnp_ransac(corrs, K, RansacParams(rng_seed=0))


def test_ransac_too_few_correspondences():
    with pytest.raises(NoConsensusError):
        pnp_ransac([Correspondence([0, 0, 0], [1, 1])] * 3, K, RansacParams())


def test_ransac_is_deterministic():
    rng = np.random.default_rng(123)
    pose = random_pose(rng)
    pts = rng.uniform(-0.5, 0.5, size=(20, 3))
    corrs = make_corrs(pts[:14], pose, noise=0.5, rng=rng)
    corrs += [Correspondence(p, rng.uniform(0, 512, size=2)) for p in pts[14:]]
    a = pnp_ransac(corrs, K, RansacParams(rng_seed=11))
    b = pnp_ransac(corrs, K, RansacParams(rng_seed=11))
    assert np.array_equal(a.inlier_flags, b.inlier_flags)
    assert a.pose.quaternion.tobytes() == b.pose.quaternion.tobytes()
    assert a.pose.translation.tobytes() == b.pose.translation.tobytes()
    assert a.mean_reprojection_error_px == b.mean_reprojection_error_px


def test_pnp_result_fields():
    pose = Pose(np.array([1.0, 0, 0, 0]), [0, 0, 5.0])
    result = pnp_ransac(make_corrs(CUBE, pose), K, RansacParams())
    assert isinstance(result, PnpResult)
    assert result.inlier_count == 8
    assert result.mean_reprojection_error_px < 1e-6


def test_correspondence_jsonl_roundtrip():
    corrs = [Correspondence([1.0, 2.0, 3.0], [4.5, 6.5], 0.75),
             Correspondence([0.0, -1.0, 2.0], [10.0, 20.0])]
    buf = io.StringIO()
    write_correspondences_jsonl(corrs, buf)
    back = read_correspondences_jsonl(io.StringIO(buf.getvalue()))
    assert len(back) == 2
    assert np.allclose(back[0].model_point, [1, 2, 3])
    assert back[0].weight == 0.75
    assert back[1].weight == 1.0


def test_params_validation():
    with pytest.raises(ValueError):
        RansacParams(max_iterations=0)
    with pytest.raises(ValueError):
        RansacParams(min_sample_size=3)
    with pytest.raises(ValueError):
        Correspondence([0, 0, 0], [1, 1], weight=-1.0)
