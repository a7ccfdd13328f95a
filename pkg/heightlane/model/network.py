"""
HeightLane network assembly: backbone -> height extraction -> height-guided
spatial transform -> keypoint lane head, plus the 2D auxiliary head.
"""

import logging
from typing import Optional, Sequence

import torch
from torch import nn

from heightlane.exceptions import ShapeMismatch
from heightlane.geometry.schemas import CameraCalibration
from heightlane.model.backbone import Backbone
from heightlane.model.heads import Aux2DHead, LaneHead
from heightlane.model.height import HeightExtraction
from heightlane.model.schemas import ModelConfig, NetworkOutput
from heightlane.model.transform import SpatialTransform

logger = logging.getLogger(__name__)


class HeightLaneNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg)
        self.height = HeightExtraction(cfg)
        self.transform = SpatialTransform(cfg, Backbone.STRIDES)
        self.lane_head = LaneHead(cfg, cfg.query_channels * len(Backbone.STRIDES))
        self.aux_head = Aux2DHead(cfg)

    def forward(
        self,
        images: torch.Tensor,
        calibs: Sequence[CameraCalibration],
        gt_heights: Optional[torch.Tensor] = None,
        use_gt_heightmap: Optional[bool] = None,
    ) -> NetworkOutput:
        """
        Args:
            images (Tensor): (B, 3, H, W)
            calibs: One calibration per image
            gt_heights (Tensor, optional): (B, H', W') GT heightmaps
            use_gt_heightmap (bool, optional): Overrides the config flag

        Returns:
            NetworkOutput: Lane rasters, auxiliary logits and intermediate features

        Raises:
            ShapeMismatch: If calibrations or GT heights do not match the batch
        """
        if len(calibs) != images.shape[0]:
            raise ShapeMismatch(f"{len(calibs)} calibrations for a batch of {images.shape[0]}")
        use_gt = self.cfg.use_gt_heightmap if use_gt_heightmap is None else use_gt_heightmap
        pyramid = self.backbone(images)
        predicted, f_height = self.height(pyramid, calibs)
        if use_gt:
            if gt_heights is None:
                raise ShapeMismatch("use_gt_heightmap is set but no GT heightmap was given")
            source = gt_heights.to(predicted.dtype)
        else:
            source = predicted.detach() if self.cfg.detach_height_grad else predicted
        f_bev = self.transform(pyramid, source, calibs)
        lanes = self.lane_head(f_bev, source)
        lanes.predicted_height = predicted
        return NetworkOutput(
            lanes=lanes,
            aux2d=self.aux_head(pyramid),
            pyramid=pyramid,
            f_height=f_height,
            f_bev=f_bev,
        )


def build_model(cfg: ModelConfig) -> HeightLaneNet:
    model = HeightLaneNet(cfg)
    n_params = sum(p.numel() for p in model.parameters())
    logger.info("built HeightLane model with %d parameters (anchors %s)", n_params, cfg.anchors.label())
    return model
