from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from heightlane.bev.schemas import AnchorSet, BevGridSpec


class ModelConfig(BaseModel):
    """Architecture and inference switches of the HeightLane network."""

    model_config = ConfigDict(extra="forbid")

    image_height: int = 192
    image_width: int = 320
    backbone_width: int = 32
    backbone_blocks: int = 1
    feature_channels: int = 64
    grid: BevGridSpec = Field(default_factory=BevGridSpec)
    anchors: AnchorSet = Field(default_factory=AnchorSet)
    height_extractor: Literal["anchors", "view_relation"] = "anchors"
    psi_channels: int = 64
    query_channels: int = 64
    query_downsample: int = 4
    layers: int = 2
    heads: int = 2
    points: int = 4
    ffn_channels: int = 128
    embedding_dim: int = 2
    head_channels: int = 64
    pe_height_scale: float = 10.0
    use_gt_heightmap: bool = False
    detach_height_grad: bool = False

    @model_validator(mode="after")
    def _consistent(self):
        if self.image_height % 32 or self.image_width % 32:
            raise ValueError("image size must be divisible by 32")
        if self.layers < 1:
            raise ValueError("transform needs at least one layer")
        if self.query_channels % self.heads:
            raise ValueError("query_channels must be divisible by heads")
        if self.query_downsample < 1:
            raise ValueError("query_downsample must be >= 1")
        if self.grid.rows % self.query_downsample or self.grid.cols % self.query_downsample:
            raise ValueError("grid dimensions must be divisible by query_downsample")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        return self

    @property
    def image_shape(self) -> Tuple[int, int]:
        return (self.image_height, self.image_width)

    def query_grid(self) -> BevGridSpec:
        ds = self.query_downsample
        g = self.grid
        return BevGridSpec(
            rows=g.rows // ds, cols=g.cols // ds, resolution=g.resolution * ds, x_min=g.x_min, y_min=g.y_min
        )


@dataclass
class FeatureLevel:
    stride: int
    feat: torch.Tensor  # (B, C, h, w)


@dataclass
class FeaturePyramid:
    """Front-view features at strictly increasing strides (16 and 32)."""

    levels: List[FeatureLevel]

    def level(self, stride: int) -> torch.Tensor:
        for lvl in self.levels:
            if lvl.stride == stride:
                return lvl.feat
        raise KeyError(f"no feature level at stride {stride}")

    @property
    def finest(self) -> FeatureLevel:
        return self.levels[0]


@dataclass
class LaneHeadOutput:
    """
    Keypoint rasters on the BEV grid, batched.

    confidence and offset are logits (B, H', W'); embedding is (B, E, H', W');
    height is the z source for decoding (B, H', W'); predicted_height is always the
    height extraction output.
    """

    confidence: torch.Tensor
    offset: torch.Tensor
    embedding: torch.Tensor
    height: torch.Tensor
    predicted_height: Optional[torch.Tensor] = None

    @property
    def batch(self) -> int:
        return int(self.confidence.shape[0])


@dataclass
class NetworkOutput:
    lanes: LaneHeadOutput
    aux2d: torch.Tensor  # (B, 1, H/16, W/16) logits
    pyramid: FeaturePyramid
    f_height: torch.Tensor
    f_bev: torch.Tensor
