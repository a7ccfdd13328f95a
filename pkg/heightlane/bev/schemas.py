from dataclasses import dataclass
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

MAX_ANCHOR_SLOPE_DEG = 45.0


class BevGridSpec(BaseModel):
    """Metric BEV raster: row i is longitudinal (x), column j is lateral (y)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    rows: int = 200
    cols: int = 48
    resolution: float = 0.5
    x_min: float = 0.0
    y_min: float = -12.0

    @field_validator("rows", "cols")
    @classmethod
    def _positive_dims(cls, v: int) -> int:
        if v <= 0:
            raise ValueError("grid dimensions must be positive")
        return v

    @field_validator("resolution")
    @classmethod
    def _positive_resolution(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("resolution must be positive")
        return v

    @property
    def shape(self) -> tuple:
        return (self.rows, self.cols)

    @property
    def x_max(self) -> float:
        return self.x_min + self.rows * self.resolution

    @property
    def y_max(self) -> float:
        return self.y_min + self.cols * self.resolution

    def x_centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.rows, dtype=np.float64) + 0.5) * self.resolution

    def y_centers(self) -> np.ndarray:
        return self.y_min + (np.arange(self.cols, dtype=np.float64) + 0.5) * self.resolution


class Heightmap(BaseModel):
    """Ground height per BEV cell, meters. NaN only in GT-builder intermediates."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    spec: BevGridSpec
    values: np.ndarray

    @model_validator(mode="after")
    def _shape_matches(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.spec.shape:
            raise ValueError(f"heightmap shape {values.shape} does not match grid {self.spec.shape}")
        self.values = values
        return self

    def has_unknown(self) -> bool:
        return bool(np.isnan(self.values).any())


class AnchorSet(BaseModel):
    """Longitudinal slopes (degrees) of the heightmap anchors."""

    model_config = ConfigDict(frozen=True)

    slopes: List[float] = [-5.0, 0.0, 5.0]

    @field_validator("slopes")
    @classmethod
    def _valid_slopes(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("anchor set must not be empty")
        if 0.0 not in v:
            raise ValueError("anchor set must contain the flat 0 degree anchor")
        if len(set(v)) != len(v):
            raise ValueError("anchor slopes must be distinct")
        for theta in v:
            if abs(theta) >= MAX_ANCHOR_SLOPE_DEG:
                raise ValueError(f"anchor slope {theta} outside (-45, 45) degrees")
        return list(v)

    def label(self) -> str:
        return ",".join(f"{s:g}" for s in self.slopes)


@dataclass
class AnchorProjection:
    """Per-cell feature-map coordinates of one anchor (H' x W' arrays)."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray
    stride: int
