"""
Geometry Service Module

Projective math linking ego-frame 3D points, the BEV grid and image pixels:
- Point projection (scalar, batched numpy, batched torch)
- Back-projection of pixels onto horizontal planes
- Calibration construction and JSON persistence
"""

import json
import logging
import math
from pathlib import Path

import numpy as np
import torch

from heightlane.exceptions import CalibrationError, NoIntersection
from heightlane.geometry.schemas import (
    FILE_ORTHONORMAL_TOL,
    ORTHONORMAL_TOL,
    CameraCalibration,
    EgoPoint,
    ImagePoint,
    nearest_rotation,
    rotation_error,
)

logger = logging.getLogger(__name__)

# Depths at or below this are behind (or on) the camera plane.
MIN_DEPTH = 1e-6

# Ego axes (x fwd, y left, z up) expressed in camera axes (x right, y down, z fwd).
EGO_TO_CAM_AXES = np.array(
    [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]], dtype=np.float64
)


def project_ego_to_image(p: EgoPoint, calib: CameraCalibration) -> ImagePoint:
    """
    Project one ego-frame point to pixel coordinates.

    Args:
        p (EgoPoint): Point in the ego frame
        calib (CameraCalibration): Camera model

    Returns:
        ImagePoint: (u, v, d) with valid=False when d <= MIN_DEPTH
    """
    u, v, d, valid = project_points(np.array([[p.x, p.y, p.z]]), calib)
    return ImagePoint(u=float(u[0]), v=float(v[0]), d=float(d[0]), valid=bool(valid[0]))


def project_points(points: np.ndarray, calib: CameraCalibration):
    """
    Batched projection of (..., 3) ego points.

    Returns:
        tuple: u, v, d arrays of shape (...) and the validity mask
    """
    pts = np.asarray(points, dtype=np.float64)
    homo = np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1)
    uvd = homo @ calib.P.T
    d = uvd[..., 2]
    valid = d > MIN_DEPTH
    safe = np.where(valid, d, 1.0)
    return uvd[..., 0] / safe, uvd[..., 1] / safe, d, valid


def project_points_torch(points: torch.Tensor, calib: CameraCalibration):
    """
    Differentiable projection of (..., 3) ego points, used for reference points.

    The projection runs in float64 and is cast back to the input dtype.

    Returns:
        tuple: uv tensor (..., 2) and boolean validity tensor (...)
    """
    P = torch.as_tensor(calib.P, dtype=torch.float64, device=points.device)
    pts = points.to(torch.float64)
    uvd = pts @ P[:, :3].T + P[:, 3]
    d = uvd[..., 2]
    valid = d > MIN_DEPTH
    safe = torch.where(valid, d, torch.ones_like(d))
    uv = uvd[..., :2] / safe.unsqueeze(-1)
    return uv.to(points.dtype), valid


def camera_center(calib: CameraCalibration) -> np.ndarray:
    T = calib.T
    return -T[:3, :3].T @ T[:3, 3]


def image_to_ground_ray(u: float, v: float, calib: CameraCalibration, plane_height: float) -> EgoPoint:
    """
    Intersect the back-projected ray of pixel (u, v) with the plane z = plane_height.

    Raises:
        NoIntersection: If the ray is parallel to the plane or meets it behind the camera
    """
    T = calib.T
    R = T[:3, :3]
    ray_cam = np.linalg.solve(calib.K, np.array([u, v, 1.0]))
    ray_ego = R.T @ ray_cam
    origin = camera_center(calib)
    if abs(ray_ego[2]) < 1e-12:
        raise NoIntersection(f"ray through ({u}, {v}) is parallel to z = {plane_height}")
    # ray_cam has unit z, so the scale is the depth along the optical axis
    depth = (plane_height - origin[2]) / ray_ego[2]
    if depth <= 0:
        raise NoIntersection(f"ray through ({u}, {v}) meets z = {plane_height} behind the camera")
    hit = origin + depth * ray_ego
    return EgoPoint(x=float(hit[0]), y=float(hit[1]), z=float(hit[2]))


def rotation_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Ego-frame rotation (radians) composed as Rz(yaw)·Ry(pitch)·Rx(roll)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]], dtype=np.float64)
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]], dtype=np.float64)
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]], dtype=np.float64)
    return rz @ ry @ rx


def rigid_transform(rotation: np.ndarray, translation) -> np.ndarray:
    m = np.eye(4, dtype=np.float64)
    m[:3, :3] = rotation
    m[:3, 3] = np.asarray(translation, dtype=np.float64)
    return m


def make_calibration(
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    height: float = 1.5,
    pitch_deg: float = 0.0,
    yaw_deg: float = 0.0,
    roll_deg: float = 0.0,
    position_xy=(0.0, 0.0),
) -> CameraCalibration:
    """
    Build a calibration for a camera mounted at (x, y, height) in the ego frame.

    Positive pitch tilts the optical axis down toward the road.
    """
    # camera body orientation in ego frame (pitch down is a positive rotation about +y)
    body = rotation_rpy(math.radians(roll_deg), math.radians(pitch_deg), math.radians(yaw_deg))
    R = EGO_TO_CAM_AXES @ body.T
    center = np.array([position_xy[0], position_xy[1], height], dtype=np.float64)
    T = rigid_transform(R, -R @ center)
    return CameraCalibration(fx=fx, fy=fy, cx=cx, cy=cy, t_ego_to_cam=T.tolist())


def scale_calibration(calib: CameraCalibration, factor: float) -> CameraCalibration:
    """Intrinsics for an image resized by `factor` (extrinsics unchanged)."""
    return CameraCalibration(
        fx=calib.fx * factor,
        fy=calib.fy * factor,
        cx=calib.cx * factor,
        cy=calib.cy * factor,
        t_ego_to_cam=calib.t_ego_to_cam,
    )


def load_calibration(path: Path) -> CameraCalibration:
    """
    Read a calibration JSON file ({fx, fy, cx, cy, t_ego_to_cam[16]}).

    A rotation block off by more than the in-memory tolerance but within
    FILE_ORTHONORMAL_TOL is replaced by its nearest rotation (SVD polar factor).
    Exact rotations are kept untouched, so save then load is lossless.

    Raises:
        CalibrationError: On malformed content or a non-orthonormal rotation
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        if isinstance(data, dict) and "t_ego_to_cam" in data:
            data = dict(data, t_ego_to_cam=_snap_rotation(data["t_ego_to_cam"]))
        return CameraCalibration.model_validate(data)
    except (ValueError, TypeError) as exc:
        raise CalibrationError(f"{path}: {exc}") from exc


def _snap_rotation(values) -> list:
    m = np.asarray(values, dtype=np.float64)
    if m.size != 16 or not np.isfinite(m).all():
        return values
    m = m.reshape(4, 4)
    err = rotation_error(m[:3, :3])
    if err <= ORTHONORMAL_TOL:
        return values
    if err > FILE_ORTHONORMAL_TOL:
        raise ValueError(f"rotation block of t_ego_to_cam is off by {err:.3g} (limit {FILE_ORTHONORMAL_TOL:g})")
    m[:3, :3] = nearest_rotation(m[:3, :3])
    return m.tolist()


def calibration_to_dict(calib: CameraCalibration) -> dict:
    return {
        "fx": calib.fx,
        "fy": calib.fy,
        "cx": calib.cx,
        "cy": calib.cy,
        "t_ego_to_cam": [float(x) for row in calib.t_ego_to_cam for x in row],
    }


def save_calibration(calib: CameraCalibration, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(calibration_to_dict(calib), f, indent=2)
