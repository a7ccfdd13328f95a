import torch
from torch import nn

from heightlane.diffcore.layers import ConvGNReLU, init_kaiming
from heightlane.exceptions import ShapeMismatch
from heightlane.model.schemas import FeaturePyramid, LaneHeadOutput, ModelConfig


class LaneHead(nn.Module):
    """Shared conv trunk with confidence, offset and embedding branches."""

    def __init__(self, cfg: ModelConfig, in_channels: int):
        super().__init__()
        self.grid_shape = cfg.grid.shape
        c = cfg.head_channels
        self.trunk = nn.Sequential(ConvGNReLU(in_channels, c), ConvGNReLU(c, c))
        self.confidence = nn.Conv2d(c, 1, 1)
        self.offset = nn.Conv2d(c, 1, 1)
        self.embedding = nn.Conv2d(c, cfg.embedding_dim, 1)
        init_kaiming(self)

    def forward(self, f_bev: torch.Tensor, height: torch.Tensor) -> LaneHeadOutput:
        if tuple(f_bev.shape[-2:]) != tuple(self.grid_shape):
            raise ShapeMismatch(f"F_BEV spatial shape {tuple(f_bev.shape[-2:])} != grid {self.grid_shape}")
        x = self.trunk(f_bev)
        return LaneHeadOutput(
            confidence=self.confidence(x).squeeze(1),
            offset=self.offset(x).squeeze(1),
            embedding=self.embedding(x),
            height=height,
            predicted_height=height,
        )


class Aux2DHead(nn.Module):
    """2D lane segmentation logits on the stride-16 feature map."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.feature_channels
        self.body = nn.Sequential(ConvGNReLU(c, c), nn.Conv2d(c, 1, 1))
        init_kaiming(self)

    def forward(self, pyramid: FeaturePyramid) -> torch.Tensor:
        return self.body(pyramid.level(16))
