from dataclasses import dataclass
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from heightlane.exceptions import NonRigidTransform

RIGID_TOL = 1e-6
# Points more than this many meters above their sweep's sensor pose are not ground.
DEFAULT_Z_BAND = 5.0


def as_rigid(matrix, tol: float = RIGID_TOL) -> np.ndarray:
    """
    Coerce 16 numbers or a 4x4 nested list into a rigid transform.

    Raises:
        NonRigidTransform: If the rotation block is not a proper rotation
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.size != 16:
        raise NonRigidTransform(f"pose must have 16 entries, got {m.size}")
    m = m.reshape(4, 4)
    r = m[:3, :3]
    if (
        not np.all(np.isfinite(m))
        or np.abs(r @ r.T - np.eye(3)).max() > tol
        or abs(np.linalg.det(r) - 1.0) > tol
        or np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > tol
    ):
        raise NonRigidTransform("pose is not a rigid transform")
    return m


class SweepEntry(BaseModel):
    points: str
    pose: List[float] = Field(min_length=16, max_length=16)

    @property
    def matrix(self) -> np.ndarray:
        return as_rigid(self.pose)


class SweepManifest(BaseModel):
    """
    Point sweeps with their sweep-to-scene poses plus the labeled frame's ego pose.

    The scene frame is any fixed world frame shared by every pose in the manifest;
    target_pose maps the labeled frame's ego frame into it.
    """

    model_config = ConfigDict(extra="ignore")

    sweeps: List[SweepEntry]
    target_pose: List[float] = Field(min_length=16, max_length=16)
    z_band: float = Field(default=DEFAULT_Z_BAND, gt=0)
    frame_note: str = "scene frame: fixed world frame shared by all poses"

    @field_validator("sweeps")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("manifest needs at least one sweep")
        return v

    @property
    def target_matrix(self) -> np.ndarray:
        return as_rigid(self.target_pose)


@dataclass
class GroundCloud:
    """N x 3 scene-frame points already filtered to drivable ground."""

    points: np.ndarray

    def __len__(self) -> int:
        return int(self.points.shape[0])


class HeightmapQA(BaseModel):
    occupied_fraction: float
    min_height: float
    max_height: float
    row_coverage: List[float]
