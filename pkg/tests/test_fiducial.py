import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import project_square, random_tag_pose, rot_y, rotation_angle
from parkslam import fiducial as fd
from parkslam.exceptions import DegenerateHomography
from parkslam.geometry import Point2

CAM = fd.CameraIntrinsics()
SIDE = fd.DEFAULT_TAG_SIDE


def det_from(R, t, tag_id=1):
    return fd.TagDetection(tag_id, project_square(R, t, SIDE, CAM.f, CAM.x0, CAM.y0))


def test_camera_validation():
    with pytest.raises(ValueError):
        fd.CameraIntrinsics(f=0.0)


def test_fronto_parallel():
    t = np.array([0.0, 0.0, 5.0])
    det = det_from(np.eye(3), t)
    R, t_hat = fd.solve_pnp(det, CAM, SIDE)
    assert t_hat == pytest.approx(t, abs=1e-9)
    assert rotation_angle(R, np.eye(3)) < 1e-9
    proj = project_square(R, t_hat, SIDE, CAM.f, CAM.x0, CAM.y0)
    assert np.abs(proj - det.corners).max() < 0.01


def test_yaw_thirty_degrees():
    Rt = rot_y(math.radians(30))
    R, t = fd.solve_pnp(det_from(Rt, np.array([0.5, 0.2, 8.0])), CAM, SIDE)
    yaw = math.atan2(R[0, 2], R[2, 2])
    assert abs(math.degrees(yaw) - 30) < 0.5


def test_collinear_corners_rejected():
    det = fd.TagDetection(1, [[100, 100], [200, 100], [300, 100], [400, 100]])
    with pytest.raises(DegenerateHomography):
        fd.solve_pnp(det, CAM, SIDE)
    _, _, ok = fd.solve_pnp_batch(det.corners[None], CAM, SIDE)
    assert not ok[0]


def test_non_convex_rejected():
    det = fd.TagDetection(1, [[100, 100], [200, 200], [200, 100], [100, 200]])
    with pytest.raises(DegenerateHomography):
        fd.solve_pnp(det, CAM, SIDE)


def test_rotation_orthonormal_and_d_is_norm():
    rng = np.random.default_rng(1)
    for _ in range(50):
        Rt, t, c = random_tag_pose(rng)
        est = fd.estimate_tag(fd.TagDetection(1, c), CAM, SIDE)
        assert np.abs(est.R.T @ est.R - np.eye(3)).max() < 1e-9
        assert np.linalg.det(est.R) == pytest.approx(1.0, abs=1e-9)
        assert est.d == np.linalg.norm(est.t)


def test_round_trip_noiseless():
    rng = np.random.default_rng(2)
    for _ in range(200):
        Rt, t, c = random_tag_pose(rng)
        R, t_hat = fd.solve_pnp(fd.TagDetection(1, c), CAM, SIDE)
        d = np.linalg.norm(t)
        assert np.linalg.norm(t_hat - t) < 1e-3 * d
        assert math.degrees(rotation_angle(R, Rt)) < 0.5


def test_batch_matches_scalar():
    rng = np.random.default_rng(3)
    poses = [random_tag_pose(rng) for _ in range(60)]
    corners = np.stack([c for _, _, c in poses]) + rng.normal(0, 0.5, (60, 4, 2))
    Rb, tb, ok = fd.solve_pnp_batch(corners, CAM, SIDE)
    assert ok.all()
    for c, R, t in zip(corners, Rb, tb):
        Rs, ts = fd.solve_pnp(fd.TagDetection(1, c), CAM, SIDE)
        assert np.abs(ts - t).max() < 1e-6
        assert rotation_angle(Rs, R) < 1e-6


def test_batch_empty():
    R, t, ok = fd.solve_pnp_batch(np.zeros((0, 4, 2)), CAM, SIDE)
    assert R.shape == (0, 3, 3) and t.shape == (0, 3) and ok.shape == (0,)


def test_direct_angle_examples():
    assert fd.direct_angle(CAM.x0, CAM) == 0.0
    assert fd.direct_angle(CAM.x0 + CAM.f, CAM) == pytest.approx(math.pi / 4)
    for f in (500.0, 1234.5):
        cam = fd.CameraIntrinsics(f=f, x0=640.0)
        assert fd.direct_angle(cam.x0 - f / math.sqrt(3), cam) == pytest.approx(math.atan(-1 / math.sqrt(3)))
        assert fd.direct_angle(cam.x0 - f / math.sqrt(3), cam) == pytest.approx(-math.pi / 6)


def test_tag_position_examples():
    p = fd.tag_position(0.0, 10.0)
    assert (p.x, p.y) == pytest.approx((0, 10))
    p = fd.tag_position(math.pi / 2, 3.0)
    assert (p.x, p.y) == pytest.approx((3, 0))
    p = fd.tag_position(math.pi / 6, 2.0)
    assert (p.x, p.y) == pytest.approx((1.0, math.sqrt(3)), abs=1e-15)
    with pytest.raises(ValueError):
        fd.tag_position(0.0, 0.0)


def test_validate_examples():
    Rt = rot_y(0.2)
    t = np.array([1.5, 0.1, 9.0])
    det = det_from(Rt, t)
    alpha = fd.direct_angle(det.center_x, CAM)
    assert fd.validate(fd.solve_pnp(det, CAM, SIDE), alpha)
    flipped = np.array([-t[0], t[1], t[2]])
    assert not fd.validate((Rt, flipped), alpha)
    tol = 0.05
    bearing = math.atan2(t[0], t[2])
    assert fd.validate((Rt, t), bearing - tol, tol)


@given(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6), st.floats(1, 19), st.floats(0.001, 0.5))
def test_validate_sign_symmetric(bearing, alpha, d, tol):
    t = d * np.array([math.sin(bearing), 0.0, math.cos(bearing)])
    mirrored = np.array([-t[0], t[1], t[2]])
    assert fd.validate((np.eye(3), t), alpha, tol) == fd.validate((np.eye(3), mirrored), -alpha, tol)


def _est(d):
    return fd.TagPoseEstimate(1, np.eye(3), np.array([0, 0, d]), 0.0, d, Point2(0, d), True)


def test_range_filter_boundary():
    assert fd.range_filter([_est(20.0)], 20.0) == []
    assert len(fd.range_filter([_est(19.99)], 20.0)) == 1
    assert fd.range_filter([], 20.0) == []
    with pytest.raises(ValueError):
        fd.range_filter([], 0.0)


def test_direct_angle_and_pnp_agree():
    rng = np.random.default_rng(4)
    for _ in range(200):
        Rt, t, c = random_tag_pose(rng, yaw=math.radians(45))
        det = fd.TagDetection(1, c)
        alpha = fd.direct_angle(det.center_x, CAM)
        p = fd.tag_position(alpha, np.linalg.norm(t))
        assert math.hypot(p.x - t[0], p.y - t[2]) < 0.02 * np.linalg.norm(t)


def test_edge_position_upright_tag():
    rng = np.random.default_rng(5)
    for _ in range(100):
        d = rng.uniform(2, 19)
        b = rng.uniform(-0.5, 0.5)
        t = np.array([d * math.sin(b), 0.3, d * math.cos(b)])
        det = det_from(rot_y(rng.uniform(-1, 1)), t)
        p = fd.edge_position(det, CAM, SIDE)
        assert (p.x, p.y) == pytest.approx((t[0], t[2]), abs=1e-9)


def test_edge_position_zero_edge():
    det = fd.TagDetection(1, [[10, 10], [20, 10], [20, 20], [10, 10]])
    with pytest.raises(DegenerateHomography):
        fd.edge_position(det, CAM, SIDE)


def test_invalid_estimate_falls_back_to_direct_angle():
    det = det_from(np.eye(3), np.array([1.0, 0.0, 6.0]))
    R = np.eye(3)
    t = np.array([-1.0, 0.0, 6.0])
    est = fd.pose_estimate(det, R, t, CAM)
    assert not est.valid
    expect = fd.tag_position(fd.direct_angle(det.center_x, CAM), np.linalg.norm(t))
    assert est.position_vehicle_frame == expect


def test_tag_information_grows_with_range():
    near, far = fd.tag_information(3.0), fd.tag_information(15.0)
    assert np.linalg.eigvalsh(far).min() < np.linalg.eigvalsh(near).min()
    assert np.allclose(near, near.T)


def test_relative_to_body():
    assert fd.relative_to_body(Point2(1.0, 5.0)) == pytest.approx([5.0, -1.0])
