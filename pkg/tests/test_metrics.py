import numpy as np
import pytest

from conftest import random_pose
from widepose.errors import ZeroTranslationError
from widepose.geometry import Pose
from widepose.metrics import (
    DepthBands,
    ModelCloud,
    adi_accuracy,
    adi_distance,
    add_distance,
    bucket_by_depth,
    load_model_cloud,
    load_obj_vertices,
    load_ply_vertices,
    speed_score,
)

CLOUD = ModelCloud.from_points(
    np.array([[0.5, 0.5, 0.5], [-0.5, 0.5, -0.5], [0.5, -0.5, -0.5],
              [-0.5, -0.5, 0.5], [0.0, 0.0, 0.0]]))


def test_add_zero_for_identical_poses():
    rng = np.random.default_rng(1)
    pose = random_pose(rng)
    assert add_distance(pose, pose, CLOUD) == 0.0


def test_add_pure_translation_is_exact():
    rng = np.random.default_rng(2)
    for _ in range(20):
        pose = random_pose(rng)
        dt = rng.normal(size=3)
        moved = Pose(pose.quaternion, pose.translation + dt)
        assert abs(add_distance(pose, moved, CLOUD) - np.linalg.norm(dt)) < 1e-12


def test_add_matches_brute_force_oracle():
    rng = np.random.default_rng(3)
    cloud = ModelCloud.from_points(rng.uniform(-1, 1, size=(3, 3)))
    gt, est = random_pose(rng), random_pose(rng)
    total = 0.0
    for p in cloud.points:
        a = gt.rotation @ p + gt.translation
        b = est.rotation @ p + est.translation
        total += np.sqrt(((a - b) ** 2).sum())
    assert abs(add_distance(gt, est, cloud) - total / 3) < 1e-12


def test_adi_zero_for_identical_poses():
    rng = np.random.default_rng(4)
    pose = random_pose(rng)
    assert adi_distance(pose, pose, CLOUD) == 0.0


def test_adi_never_exceeds_add():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        gt, est = random_pose(rng), random_pose(rng)
        assert adi_distance(gt, est, CLOUD) <= add_distance(gt, est, CLOUD) + 1e-12


def test_adi_matches_brute_force_nearest_neighbor():
    rng = np.random.default_rng(6)
    cloud = ModelCloud.from_points(rng.uniform(-1, 1, size=(4, 3)))
    gt, est = random_pose(rng), random_pose(rng)
    a = cloud.points @ gt.rotation.T + gt.translation
    b = cloud.points @ est.rotation.T + est.translation
    oracle = np.mean([min(np.linalg.norm(x - y) for y in b) for x in a])
    assert abs(adi_distance(gt, est, cloud) - oracle) < 1e-12


def test_symmetric_square_adi_zero_add_positive():
    square = ModelCloud.from_points(
        np.array([[1.0, 1.0, 0.0], [-1.0, 1.0, 0.0], [-1.0, -1.0, 0.0], [1.0, -1.0, 0.0]]))
    rng = np.random.default_rng(7)
    gt = random_pose(rng)
    est = gt.compose(Pose.from_axis_angle([0, 0, 1], np.pi / 2, [0, 0, 0]))
    assert adi_distance(gt, est, square) < 1e-12
    assert add_distance(gt, est, square) > 1.0


def test_distances_invariant_under_common_rigid_transform():
    rng = np.random.default_rng(8)
    gt, est = random_pose(rng), random_pose(rng)
    extra = random_pose(rng)
    add0, adi0 = add_distance(gt, est, CLOUD), adi_distance(gt, est, CLOUD)
    add1 = add_distance(extra.compose(gt), extra.compose(est), CLOUD)
    adi1 = adi_distance(extra.compose(gt), extra.compose(est), CLOUD)
    assert abs(add0 - add1) < 1e-9
    assert abs(adi0 - adi1) < 1e-9


def test_adi_accuracy_examples():
    assert adi_accuracy([0.0, 0.0, 0.0], diameter=1.0) == 1.0
    assert adi_accuracy([0.05, 0.15], diameter=1.0) == 0.5
    with pytest.warns(RuntimeWarning):
        assert adi_accuracy([], diameter=1.0) == 0.0
    with pytest.raises(ValueError):
        adi_accuracy([0.1], diameter=0.0)


def test_speed_score_examples():
    rng = np.random.default_rng(9)
    pose = random_pose(rng)
    s = speed_score(pose, pose)
    assert s == (0.0, 0.0, 0.0)
    flipped = pose.compose(Pose.from_axis_angle([1, 0, 0], np.pi, [0, 0, 0]))
    assert abs(speed_score(pose, flipped).e_q - np.pi) < 1e-9
    gt = Pose(np.array([1.0, 0, 0, 0]), [0, 0, 5.0])
    est = Pose(np.array([1.0, 0, 0, 0]), [0, 0, 5.5])
    assert abs(speed_score(gt, est).e_t - 0.1) < 1e-12


def test_speed_score_quaternion_sign_invariance():
    rng = np.random.default_rng(10)
    gt, est = random_pose(rng), random_pose(rng)
    ref = speed_score(gt, est).e_q
    est_neg = Pose(-est.quaternion, est.translation)
    assert abs(speed_score(gt, est_neg).e_q - ref) < 1e-12


def test_speed_score_zero_translation_raises():
    gt = Pose(np.array([1.0, 0, 0, 0]), [0, 0, 0])
    with pytest.raises(ZeroTranslationError):
        speed_score(gt, gt)


def test_bucket_examples():
    buckets, oor = bucket_by_depth([2.5, 4.0, 8.0, 11.0, 1.0])
    assert buckets["near"] == [0, 4]
    assert buckets["medium"] == [1]
    assert buckets["far"] == [2]
    assert oor == [3]


def test_bucket_uniform_depths_split_evenly():
    rng = np.random.default_rng(11)
    depths = rng.uniform(1.0, 10.0, size=10_000)
    buckets, oor = bucket_by_depth(depths)
    assert not oor
    for name in ("near", "medium", "far"):
        frac = len(buckets[name]) / 10_000
        assert abs(frac - 1.0 / 3.0) < 0.02


def test_depth_bands_validation():
    with pytest.raises(ValueError):
        DepthBands(bands=((4.0, 1.0),), names=("bad",))
    with pytest.raises(ValueError):
        DepthBands(bands=((1.0, 5.0), (4.0, 7.0)), names=("a", "b"))


def test_model_cloud_validation():
    with pytest.raises(ValueError):
        ModelCloud.from_points(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        ModelCloud(points=CLOUD.points, diameter=42.0)


def test_obj_and_ply_loaders(tmp_path):
    obj = tmp_path / "model.obj"
    obj.write_text("# comment\nv 0 0 0\nv 1 0 0\nv 0 2 0\nf 1 2 3\n")
    verts = load_obj_vertices(obj)
    assert verts.shape == (3, 3)
    cloud = load_model_cloud(obj)
    assert abs(cloud.diameter - np.sqrt(5.0)) < 1e-12

    ply = tmp_path / "model.ply"
    ply.write_text(
        "ply\nformat ascii 1.0\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n0 0 0\n0 0 3\n")
    verts = load_ply_vertices(ply)
    assert np.allclose(verts, [[0, 0, 0], [0, 0, 3]])
    assert load_model_cloud(ply).diameter == 3.0

    bad = tmp_path / "model.stl"
    bad.write_text("whatever")
    with pytest.raises(ValueError):
        load_model_cloud(bad)
