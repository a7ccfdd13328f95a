from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

# In-memory calibrations must be rigid to this tolerance.
ORTHONORMAL_TOL = 1e-9
# Calibration files may drift up to this; load_calibration snaps them back.
FILE_ORTHONORMAL_TOL = 1e-6


def rotation_error(r: np.ndarray) -> float:
    """Largest deviation of R·Rᵀ from I, or of det(R) from 1."""
    r = np.asarray(r, dtype=np.float64)
    return max(float(np.abs(r @ r.T - np.eye(3)).max()), abs(float(np.linalg.det(r)) - 1.0))


def nearest_rotation(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=np.float64))
    return u @ vt


class CameraCalibration(BaseModel):
    """
    Pinhole intrinsics plus the ego-to-camera rigid transform.

    Ego frame is x-forward, y-left, z-up; camera frame is z-forward, x-right, y-down.
    """

    model_config = ConfigDict(frozen=True)

    fx: float
    fy: float
    cx: float
    cy: float
    t_ego_to_cam: List[List[float]]

    @field_validator("fx", "fy")
    @classmethod
    def _positive_focal(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("focal lengths must be positive")
        return v

    @field_validator("t_ego_to_cam", mode="before")
    @classmethod
    def _rigid_transform(cls, v):
        m = np.asarray(v, dtype=np.float64)
        if m.size == 16 and m.ndim == 1:
            m = m.reshape(4, 4)
        if m.shape != (4, 4) or not np.all(np.isfinite(m)):
            raise ValueError("t_ego_to_cam must be 16 finite numbers (row-major 4x4)")
        r = m[:3, :3]
        if np.abs(r @ r.T - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise ValueError("rotation block of t_ego_to_cam is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
            raise ValueError("rotation block of t_ego_to_cam must have determinant 1")
        if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 0:
            raise ValueError("last row of t_ego_to_cam must be [0, 0, 0, 1]")
        return m.tolist()

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    @property
    def T(self) -> np.ndarray:
        return np.array(self.t_ego_to_cam, dtype=np.float64)

    @property
    def P(self) -> np.ndarray:
        """3x4 projection matrix K·T[:3]."""
        return self.K @ self.T[:3]


class ImagePoint(BaseModel):
    u: float
    v: float
    d: float
    valid: bool


class EgoPoint(BaseModel):
    x: float
    y: float
    z: float
