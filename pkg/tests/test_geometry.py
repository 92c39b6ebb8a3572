import numpy as np
import pytest

from conftest import random_pose
from widepose.errors import NonPositiveDepthError
from widepose.geometry import (
    CameraIntrinsics,
    Pose,
    backproject_ray,
    matrix_to_quat,
    project,
    quat_angle,
    quat_to_matrix,
    transform_to_camera,
)

K = CameraIntrinsics(fx=100.0, fy=100.0, cx=64.0, cy=64.0)


def test_project_optical_axis_hits_principal_point():
    pose = Pose.identity().compose(Pose(np.array([1.0, 0, 0, 0]), [0, 0, 5.0]))
    assert np.allclose(project(K, pose, [0.0, 0.0, 0.0]), [64.0, 64.0])


def test_project_offaxis_point():
    pose = Pose(np.array([1.0, 0, 0, 0]), [0, 0, 5.0])
    # 100 * (1/5) + 64
    assert np.allclose(project(K, pose, [1.0, 0.0, 0.0]), [84.0, 64.0])


def test_project_behind_camera_raises():
    pose = Pose(np.array([1.0, 0, 0, 0]), [0, 0, -1.0])
    with pytest.raises(NonPositiveDepthError):
        project(K, pose, [0.0, 0.0, 0.0])


def test_backproject_principal_point_is_optical_axis():
    assert np.allclose(backproject_ray(K, [64.0, 64.0]), [0.0, 0.0, 1.0])


def test_backproject_one_pixel_right():
    assert np.allclose(backproject_ray(K, [65.0, 64.0]), [0.01, 0.0, 1.0])


def test_project_backproject_rays_are_parallel():
    rng = np.random.default_rng(11)
    for _ in range(100):
        pose = random_pose(rng)
        p = rng.uniform(-0.5, 0.5, size=3)
        cam = transform_to_camera(pose, p)
        ray = backproject_ray(K, project(K, pose, p))
        assert np.linalg.norm(np.cross(ray, cam)) < 1e-9 * np.linalg.norm(cam)


def test_transform_examples():
    pose = Pose(np.array([1.0, 0, 0, 0]), [0, 0, 5.0])
    assert np.allclose(transform_to_camera(pose, [0.0, 0.0, 0.0]), [0, 0, 5.0])
    ident = Pose.identity()
    p = np.array([0.3, -0.2, 0.9])
    assert np.allclose(transform_to_camera(ident, p), p)
    rot90 = Pose.from_axis_angle([0, 0, 1], np.pi / 2, [1.0, 0, 0])
    assert np.allclose(transform_to_camera(rot90, [1.0, 0, 0]), [1.0, 1.0, 0.0])


def test_compose_inverse_roundtrip():
    rng = np.random.default_rng(5)
    for _ in range(100):
        pose = random_pose(rng)
        rt = pose.inverse().compose(pose)
        assert quat_angle(rt.quaternion, [1, 0, 0, 0]) < 1e-9
        assert np.linalg.norm(rt.translation) < 1e-9


def test_identity_quaternion_gives_identity_matrix():
    assert np.allclose(quat_to_matrix([1.0, 0, 0, 0]), np.eye(3))


def test_rotation_invariants_survive_long_composition_chains():
    rng = np.random.default_rng(3)
    pose = Pose.identity()
    for _ in range(100):
        pose = pose.compose(random_pose(rng))
        R = pose.rotation
        assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-9
        assert abs(np.linalg.det(R) - 1.0) < 1e-9
        assert abs(np.linalg.norm(pose.quaternion) - 1.0) < 1e-9


def test_doubling_depth_halves_pixel_offset():
    p = np.array([0.5, 0.0, 0.0])
    near = project(K, Pose(np.array([1.0, 0, 0, 0]), [0, 0, 4.0]), p)
    far = project(K, Pose(np.array([1.0, 0, 0, 0]), [0, 0, 8.0]), p)
    assert np.isclose((near[0] - K.cx) / (far[0] - K.cx), 2.0)


def test_matrix_quaternion_roundtrip():
    rng = np.random.default_rng(17)
    for _ in range(50):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        R = quat_to_matrix(q)
        q2 = matrix_to_quat(R)
        assert quat_angle(q, q2) < 1e-9


def test_from_matrix_renormalizes_small_drift():
    rng = np.random.default_rng(23)
    R = quat_to_matrix(rng.normal(size=4))
    drifted = R + rng.normal(scale=1e-6, size=(3, 3))
    pose = Pose.from_matrix(drifted, [0, 0, 1.0])
    Rs = pose.rotation
    assert np.max(np.abs(Rs.T @ Rs - np.eye(3))) < 1e-9
    assert np.max(np.abs(Rs - R)) < 1e-5


def test_from_matrix_rejects_reflection():
    R = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        Pose.from_matrix(R, [0, 0, 1.0])


def test_pose_json_roundtrip():
    rng = np.random.default_rng(29)
    pose = random_pose(rng)
    back = Pose.from_dict(pose.to_dict())
    assert quat_angle(pose.quaternion, back.quaternion) < 1e-12
    assert np.allclose(pose.translation, back.translation)


def test_intrinsics_json_roundtrip_and_validation():
    k2 = CameraIntrinsics.from_dict(K.to_dict())
    assert (k2.fx, k2.fy, k2.cx, k2.cy) == (K.fx, K.fy, K.cx, K.cy)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=-1.0, fy=1.0, cx=0.0, cy=0.0)
    assert np.allclose(np.linalg.inv(K.matrix) @ K.matrix, np.eye(3))


def test_from_fov_focal_length():
    k = CameraIntrinsics.from_fov(100.0, (512, 512))
    assert np.isclose(k.fx, 256.0 / np.tan(np.deg2rad(50.0)))
    assert np.isclose(k.fx, 214.8, atol=0.05)
    assert k.cx == 256.0 and k.cy == 256.0
