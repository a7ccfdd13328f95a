from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict


class Lane3D(BaseModel):
    """Ordered ego-frame polyline (x, y, z) in meters."""

    points: List[Tuple[float, float, float]]
    instance_id: Optional[int] = None

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64).reshape(-1, 3)


class EvalProtocol(BaseModel):
    """Matching and reporting constants of the 3D lane evaluation."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    x_start: float = 0.0
    x_end: float = 100.0
    station_step: float = 0.5
    point_thresh: float = 1.5
    coverage: float = 0.75
    near_far_split: float = 40.0

    def stations(self) -> np.ndarray:
        n = int(round((self.x_end - self.x_start) / self.station_step)) + 1
        return self.x_start + np.arange(n, dtype=np.float64) * self.station_step


@dataclass
class PairScore:
    pred: int
    gt: int
    covered: float
    true_positive: bool


@dataclass
class Matching:
    """Counts plus per-station absolute errors of true-positive pairs."""

    num_pred: int
    num_gt: int
    pairs: List[PairScore] = field(default_factory=list)
    station_x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    abs_dy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    abs_dz: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def tp(self) -> int:
        return sum(1 for p in self.pairs if p.true_positive)

    @property
    def fp(self) -> int:
        return self.num_pred - self.tp

    @property
    def fn(self) -> int:
        return self.num_gt - self.tp


class EvalReport(BaseModel):
    f_score: float
    precision: float
    recall: float
    x_error_near: float
    x_error_far: float
    z_error_near: float
    z_error_far: float
    tp: int
    fp: int
    fn: int
