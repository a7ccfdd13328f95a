"""
Height Extraction Module

Front-view features are sampled onto the BEV grid through multi-slope heightmap
anchors, concatenated per slope and mapped to a dense heightmap by a small conv
stack (psi). The view-relation variant replaces anchor sampling by a per-channel MLP.
"""

from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from heightlane.bev.schemas import AnchorSet, BevGridSpec, Heightmap
from heightlane.bev.service import make_height_anchor, project_anchor_grid
from heightlane.diffcore.layers import ConvGNReLU, init_kaiming
from heightlane.diffcore.ops import bilinear_sample_batched, concat
from heightlane.exceptions import GridMismatch
from heightlane.geometry.schemas import CameraCalibration
from heightlane.model.schemas import FeaturePyramid, ModelConfig


def calibration_key(calib: CameraCalibration) -> tuple:
    return (calib.fx, calib.fy, calib.cx, calib.cy) + tuple(x for row in calib.t_ego_to_cam for x in row)


@lru_cache(maxsize=256)
def _anchor_coords(key: tuple, spec: BevGridSpec, theta: float, feat_shape: tuple, img_shape: tuple):
    calib = CameraCalibration(fx=key[0], fy=key[1], cx=key[2], cy=key[3], t_ego_to_cam=list(key[4:]))
    proj = project_anchor_grid(make_height_anchor(spec, theta), calib, feat_shape, img_shape)
    coords = np.stack([proj.u, proj.v], axis=-1).reshape(-1, 2)
    return coords, proj.valid.reshape(-1)


def sample_anchor_features(
    feat: torch.Tensor,
    calibs: Sequence[CameraCalibration],
    spec: BevGridSpec,
    anchors: AnchorSet,
    img_shape: Tuple[int, int],
) -> torch.Tensor:
    """
    F_Height: per-slope bilinear samples of `feat` concatenated channel-wise.

    Args:
        feat (Tensor): (B, C, h, w) front-view features
        calibs: One calibration per batch item

    Returns:
        Tensor: (B, C·|anchors|, H', W'); invalid projections sample zero
    """
    B, C, h, w = feat.shape
    per_slope: List[torch.Tensor] = []
    for theta in anchors.slopes:
        coords, valid = [], []
        for calib in calibs:
            c, m = _anchor_coords(calibration_key(calib), spec, float(theta), (h, w), tuple(img_shape))
            coords.append(c)
            valid.append(m)
        coords_t = torch.as_tensor(np.stack(coords), dtype=feat.dtype, device=feat.device)
        valid_t = torch.as_tensor(np.stack(valid), dtype=feat.dtype, device=feat.device)
        samples = bilinear_sample_batched(feat, coords_t) * valid_t.unsqueeze(-1)
        per_slope.append(samples.transpose(1, 2).reshape(B, C, spec.rows, spec.cols))
    return concat(per_slope, dim=1)


class ViewRelation(nn.Module):
    """Per-channel MLP from the flattened front-view map to the BEV grid."""

    def __init__(self, in_cells: int, out_shape: Tuple[int, int]):
        super().__init__()
        self.out_shape = out_shape
        self.mlp = nn.Sequential(
            nn.Linear(in_cells, in_cells),
            nn.ReLU(),
            nn.Linear(in_cells, out_shape[0] * out_shape[1]),
        )
        init_kaiming(self)

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        B, C = feat.shape[:2]
        return self.mlp(feat.flatten(2)).view(B, C, *self.out_shape)


class HeightExtraction(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.feature_channels
        if cfg.height_extractor == "view_relation":
            h16, w16 = cfg.image_height // 16, cfg.image_width // 16
            self.view_relation = ViewRelation(h16 * w16, cfg.grid.shape)
            in_ch = c
        else:
            self.view_relation = None
            in_ch = c * len(cfg.anchors.slopes)
        self.psi = nn.Sequential(
            ConvGNReLU(in_ch, cfg.psi_channels),
            ConvGNReLU(cfg.psi_channels, cfg.psi_channels),
            nn.Conv2d(cfg.psi_channels, 1, 1),
        )
        init_kaiming(self.psi)

    def features(self, pyramid: FeaturePyramid, calibs: Sequence[CameraCalibration]) -> torch.Tensor:
        feat = pyramid.finest.feat
        if self.view_relation is not None:
            return self.view_relation(feat)
        return sample_anchor_features(feat, calibs, self.cfg.grid, self.cfg.anchors, self.cfg.image_shape)

    def forward(self, pyramid: FeaturePyramid, calibs: Sequence[CameraCalibration]):
        """
        Returns:
            tuple: heightmap tensor (B, H', W') and F_Height (B, C', H', W')
        """
        f_height = self.features(pyramid, calibs)
        return self.psi(f_height).squeeze(1), f_height


def height_extraction(module: HeightExtraction, pyramid: FeaturePyramid, calib, spec, anchors) -> tuple:
    """
    Single-sample convenience wrapper returning (Heightmap, F_Height).

    spec and anchors must match the module's configuration.
    """
    if spec != module.cfg.grid or anchors != module.cfg.anchors:
        raise GridMismatch("grid spec and anchors must match the module configuration")
    height, f_height = module(pyramid, [calib])
    hm = Heightmap(spec=spec, values=height[0].detach().to(torch.float64).cpu().numpy())
    return hm, f_height
