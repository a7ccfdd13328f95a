import json

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from heightlane.exceptions import CalibrationError, NoIntersection
from heightlane.geometry.schemas import ORTHONORMAL_TOL, CameraCalibration, EgoPoint, rotation_error
from heightlane.geometry.service import (
    image_to_ground_ray,
    load_calibration,
    make_calibration,
    project_ego_to_image,
    project_points,
    project_points_torch,
    save_calibration,
    scale_calibration,
)


def test_projection_of_point_straight_ahead(calib):
    p = project_ego_to_image(EgoPoint(x=10.0, y=0.0, z=0.0), calib)
    assert p.valid
    assert p.u == pytest.approx(160.0)
    assert p.v == pytest.approx(80.0 + 220.0 * 1.5 / 10.0)
    assert p.d == pytest.approx(10.0)


def test_left_of_ego_projects_left_of_center(calib):
    p = project_ego_to_image(EgoPoint(x=20.0, y=2.0, z=0.0), calib)
    assert p.u < calib.cx


def test_point_behind_camera_is_invalid(calib):
    p = project_ego_to_image(EgoPoint(x=-5.0, y=0.0, z=0.0), calib)
    assert not p.valid


@pytest.mark.parametrize("pitch", [0.0, 2.0, -1.5])
@pytest.mark.parametrize("plane", [0.0, 0.8, -0.5])
def test_ray_plane_intersection_inverts_projection(pitch, plane):
    calib = make_calibration(fx=500.0, fy=480.0, cx=320.0, cy=180.0, height=1.6, pitch_deg=pitch, yaw_deg=1.0)
    points = np.array([[8.0, -3.0, plane], [25.0, 1.5, plane], [60.0, 4.0, plane]])
    u, v, _, valid = project_points(points, calib)
    assert valid.all()
    for k in range(len(points)):
        hit = image_to_ground_ray(u[k], v[k], calib, plane)
        assert np.allclose([hit.x, hit.y, hit.z], points[k], atol=1e-6)


def test_ray_above_horizon_does_not_reach_ground(calib):
    with pytest.raises(NoIntersection):
        image_to_ground_ray(160.0, 20.0, calib, 0.0)


def test_ray_parallel_to_plane_raises(calib):
    with pytest.raises(NoIntersection):
        image_to_ground_ray(100.0, calib.cy, calib, 0.0)


def test_torch_projection_matches_numpy(calib):
    points = np.array([[5.0, 1.0, 0.2], [30.0, -2.0, 1.0], [-3.0, 0.0, 0.0]])
    u, v, _, valid = project_points(points, calib)
    uv, valid_t = project_points_torch(torch.tensor(points, dtype=torch.float64), calib)
    assert valid_t.tolist() == valid.tolist()
    assert np.allclose(uv[valid_t].numpy(), np.stack([u, v], axis=1)[valid])


def test_non_orthonormal_rotation_is_rejected():
    m = np.eye(4)
    m[0, 0] = 1.01
    with pytest.raises(ValidationError):
        CameraCalibration(fx=100.0, fy=100.0, cx=50.0, cy=50.0, t_ego_to_cam=m.tolist())


def test_non_positive_focal_is_rejected():
    with pytest.raises(ValidationError):
        CameraCalibration(fx=0.0, fy=100.0, cx=50.0, cy=50.0, t_ego_to_cam=np.eye(4).tolist())


def test_calibration_file_round_trip(calib, tmp_path):
    path = tmp_path / "calib.json"
    save_calibration(calib, path)
    loaded = load_calibration(path)
    assert loaded == calib
    assert np.array_equal(loaded.P, calib.P)


def _drifted(eps):
    m = np.eye(4)
    m[0, 0] = 1.0 + eps
    m[:3, 3] = [0.5, -1.5, 2.0]
    return m


def test_small_rotation_drift_is_rejected_in_memory():
    with pytest.raises(ValidationError):
        CameraCalibration(fx=100.0, fy=100.0, cx=50.0, cy=50.0, t_ego_to_cam=_drifted(1e-7).tolist())


def test_small_rotation_drift_is_snapped_when_loaded(tmp_path):
    path = tmp_path / "calib.json"
    data = {"fx": 100.0, "fy": 100.0, "cx": 50.0, "cy": 50.0, "t_ego_to_cam": _drifted(1e-7).ravel().tolist()}
    path.write_text(json.dumps(data))
    loaded = load_calibration(path)
    r = loaded.T[:3, :3]
    assert rotation_error(r) <= ORTHONORMAL_TOL
    assert np.abs(r - np.eye(3)).max() < 1e-6
    assert loaded.T[:3, 3].tolist() == [0.5, -1.5, 2.0]
    # a snapped file then round-trips exactly
    save_calibration(loaded, path)
    assert load_calibration(path) == loaded


def test_large_rotation_drift_in_file_is_rejected(tmp_path):
    path = tmp_path / "calib.json"
    data = {"fx": 100.0, "fy": 100.0, "cx": 50.0, "cy": 50.0, "t_ego_to_cam": _drifted(1e-5).ravel().tolist()}
    path.write_text(json.dumps(data))
    with pytest.raises(CalibrationError):
        load_calibration(path)


def test_malformed_calibration_file(tmp_path):
    path = tmp_path / "calib.json"
    path.write_text(json.dumps({"fx": 1.0, "fy": 1.0, "cx": 0.0, "cy": 0.0, "t_ego_to_cam": [1.0] * 16}))
    with pytest.raises(CalibrationError):
        load_calibration(path)


def test_scaled_calibration_scales_pixels(calib):
    half = scale_calibration(calib, 0.5)
    point = np.array([[15.0, 1.0, 0.0]])
    u, v, _, _ = project_points(point, calib)
    u2, v2, _, _ = project_points(point, half)
    assert u2[0] == pytest.approx(u[0] * 0.5)
    assert v2[0] == pytest.approx(v[0] * 0.5)


def test_random_configurations_round_trip():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        fx = rng.uniform(300.0, 1500.0)
        calib = make_calibration(
            fx=fx,
            fy=fx * rng.uniform(0.9, 1.1),
            cx=rng.uniform(200.0, 800.0),
            cy=rng.uniform(150.0, 450.0),
            height=rng.uniform(1.0, 2.5),
            pitch_deg=rng.uniform(-5.0, 5.0),
            yaw_deg=rng.uniform(-5.0, 5.0),
            roll_deg=rng.uniform(-2.0, 2.0),
        )
        plane = rng.uniform(-3.0, 0.5)
        points = np.stack(
            [rng.uniform(3.0, 80.0, 100), rng.uniform(-10.0, 10.0, 100), np.full(100, plane)], axis=1
        )
        u, v, _, valid = project_points(points, calib)
        assert valid.all()
        for k in range(len(points)):
            hit = image_to_ground_ray(u[k], v[k], calib, plane)
            worst = max(worst, float(np.abs(np.array([hit.x, hit.y, hit.z]) - points[k]).max()))
    assert worst < 1e-6


def test_worked_projection_example():
    calib = make_calibration(fx=1000.0, fy=1000.0, cx=512.0, cy=288.0, height=1.5)
    expected_t = np.array([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 1.5], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    assert np.abs(calib.T - expected_t).max() < 1e-12
    k = np.array([[1000.0, 0.0, 512.0], [0.0, 1000.0, 288.0], [0.0, 0.0, 1.0]])
    uvd = k @ expected_t[:3] @ np.array([10.0, 1.0, 0.0, 1.0])
    p = project_ego_to_image(EgoPoint(x=10.0, y=1.0, z=0.0), calib)
    assert abs(p.u - uvd[0] / uvd[2]) < 1e-9 and abs(p.v - uvd[1] / uvd[2]) < 1e-9
    assert abs(p.u - (512.0 - 100.0)) < 1e-9
    assert abs(p.v - (288.0 + 150.0)) < 1e-9


def _march_to_plane(u, v, calib, plane, step=0.01, reach=200.0):
    """Walk the pixel ray from the camera center until it drops through the plane."""
    m, p4 = calib.P[:, :3], calib.P[:, 3]
    center = -np.linalg.solve(m, p4)
    direction = np.linalg.solve(m, np.array([u, v, 1.0]))
    direction /= np.linalg.norm(direction)
    s = np.arange(0.0, reach, step)
    z = center[2] + s * direction[2]
    below = np.nonzero(z <= plane)[0]
    if not len(below):
        return None
    i = below[0]
    frac = (z[i - 1] - plane) / (z[i - 1] - z[i])
    return center + (s[i - 1] + frac * step) * direction


@pytest.mark.parametrize("pitch", [0.0, 3.0])
def test_ground_ray_matches_ray_march(pitch):
    calib = make_calibration(fx=500.0, fy=500.0, cx=320.0, cy=180.0, height=1.6, pitch_deg=pitch, roll_deg=1.0)
    rng = np.random.default_rng(4)
    for _ in range(25):
        u, v = rng.uniform(0.0, 640.0), rng.uniform(220.0, 360.0)
        plane = rng.uniform(-0.5, 0.5)
        marched = _march_to_plane(u, v, calib, plane)
        assert marched is not None
        hit = image_to_ground_ray(u, v, calib, plane)
        assert np.allclose([hit.x, hit.y, hit.z], marched, atol=1e-6)
