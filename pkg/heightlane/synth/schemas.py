from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from heightlane.bev.schemas import BevGridSpec, Heightmap
from heightlane.geometry.schemas import CameraCalibration
from heightlane.losses.schemas import BevTargets
from heightlane.metrics.schemas import Lane3D

MAX_PROFILE_SLOPE_DEG = 10.0


class HeightProfile(BaseModel):
    """
    Ground height as a function of longitudinal distance only.

    constant_slope uses theta; transition climbs at theta up to x0 and at theta2
    beyond; sinusoidal is amplitude·sin(2πx / wavelength).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["flat", "constant_slope", "transition", "sinusoidal"] = "flat"
    theta: float = 0.0
    theta2: float = 0.0
    x0: float = 40.0
    amplitude: float = 0.0
    wavelength: float = 50.0


class LaneCurve(BaseModel):
    """Lateral polynomial y(x) = c0 + c1·x + c2·x² of one lane marking."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    c0: float
    c1: float = 0.0
    c2: float = 0.0
    dashed: bool = False


class SceneSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    profile: HeightProfile = Field(default_factory=HeightProfile)
    lanes: List[LaneCurve]
    marking_width: float = 0.15
    dash_length: float = 3.0
    gap_length: float = 6.0
    calibration: CameraCalibration
    image_height: int = 192
    image_width: int = 320
    grid: BevGridSpec = Field(default_factory=BevGridSpec)
    seed: int = 0


class DataConfig(BaseModel):
    """Synthetic dataset parameters, or a directory holding a prepared dataset."""

    model_config = ConfigDict(extra="forbid")

    root: Optional[str] = None
    count: int = 120
    seed: int = 0
    val_fraction: float = 0.2
    transition_fraction: float = 0.4
    sloped_only: bool = False
    image_height: int = 192
    image_width: int = 320
    focal: float = 220.0
    horizon_row: float = 80.0
    camera_height: float = 1.5
    workers: int = 4
    prefetch: int = 8


@dataclass
class Sample:
    """One image with every GT view of the same scene."""

    scene_id: str
    image: torch.Tensor  # (3, H, W) in [0, 1]
    calibration: CameraCalibration
    targets: BevTargets
    lanes: List[Lane3D]
    scenario: str
    marking_mask: Optional[np.ndarray] = None  # (H, W) bool, rendered marking pixels
    painted: List[np.ndarray] = field(default_factory=list)  # per lane point, inside a dash

    @property
    def heightmap(self) -> Heightmap:
        return self.targets.heightmap

    @property
    def mask2d(self) -> np.ndarray:
        return self.targets.mask2d


@dataclass
class CloudRegion:
    """Axis-aligned ego-frame box where every ground point is dropped."""

    x_range: Tuple[float, float]
    y_range: Tuple[float, float]
