import math
from dataclasses import dataclass
from typing import Dict

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, field_validator

from heightlane.bev.schemas import Heightmap


class LossWeights(BaseModel):
    """Weights of the total objective and of the embedding pull/push terms."""

    model_config = ConfigDict(extra="forbid")

    confidence: float = 1.0
    offset: float = 1.0
    embedding: float = 0.3
    height: float = 1.0
    aux2d: float = 1.0
    var: float = 1.0
    dist: float = 1.0
    delta_v: float = 0.5
    delta_d: float = 3.0

    @field_validator("*")
    @classmethod
    def _finite_non_negative(cls, v: float) -> float:
        if not math.isfinite(v) or v < 0:
            raise ValueError("loss weights must be finite and >= 0")
        return v


@dataclass
class BevTargets:
    """
    Per-sample supervision on the BEV grid.

    confidence is {0, 1}; offset is the lateral fraction in [0, 1] on lane cells;
    instance holds lane ids from 1 (0 = background); mask2d is the stride-16 image mask.
    """

    confidence: np.ndarray
    offset: np.ndarray
    instance: np.ndarray
    heightmap: Heightmap
    mask2d: np.ndarray


@dataclass
class TargetBatch:
    confidence: torch.Tensor  # (B, H', W')
    offset: torch.Tensor
    instance: torch.Tensor  # (B, H', W') int64
    height: torch.Tensor
    mask2d: torch.Tensor  # (B, H/16, W/16)

    @property
    def batch(self) -> int:
        return int(self.confidence.shape[0])


@dataclass
class LossParts:
    confidence: torch.Tensor
    offset: torch.Tensor
    embedding: torch.Tensor
    height: torch.Tensor
    aux2d: torch.Tensor

    def as_dict(self) -> Dict[str, float]:
        return {
            "confidence": float(self.confidence),
            "offset": float(self.offset),
            "embedding": float(self.embedding),
            "height": float(self.height),
            "aux2d": float(self.aux2d),
        }
