"""
Height-Guided Spatial Transform

Per front-view scale, a learned BEV query grid runs N layers of
self-attention (with a learned (x, y, h) positional encoding) and deformable
cross-attention whose reference points are the cells' 3D positions
(x, y, H[x, y]) projected into the feature map. Final queries of every scale
are concatenated channel-wise into F_BEV.
"""

from typing import List, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from heightlane.bev.schemas import BevGridSpec
from heightlane.bev.service import grid_points
from heightlane.diffcore.layers import DeformableCrossAttention, MultiHeadSelfAttention, init_kaiming
from heightlane.diffcore.ops import concat
from heightlane.geometry.schemas import CameraCalibration
from heightlane.geometry.service import project_points_torch
from heightlane.model.schemas import FeaturePyramid, ModelConfig


class PositionalEncoding(nn.Module):
    """Learned map of (x, y, h), normalized by grid extent and a height scale."""

    def __init__(self, channels: int, spec: BevGridSpec, height_scale: float = 10.0):
        super().__init__()
        self.spec = spec
        self.height_scale = height_scale
        self.mlp = nn.Sequential(nn.Linear(3, channels), nn.ReLU(), nn.Linear(channels, channels))
        init_kaiming(self)

    def normalize(self, x: torch.Tensor, y: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        s = self.spec
        xn = 2.0 * (x - s.x_min) / (s.rows * s.resolution) - 1.0
        yn = 2.0 * (y - s.y_min) / (s.cols * s.resolution) - 1.0
        return torch.stack([xn, yn, h / self.height_scale], dim=-1)

    def forward(self, x: torch.Tensor, y: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.normalize(x, y, h))


def positional_encoding(pe: PositionalEncoding, x, y, h) -> torch.Tensor:
    t = torch.as_tensor
    dtype = pe.mlp[0].weight.dtype
    return pe(t(x, dtype=dtype), t(y, dtype=dtype), t(h, dtype=dtype))


def reference_points(
    heights: torch.Tensor,
    calibs: Sequence[CameraCalibration],
    spec: BevGridSpec,
    stride: int,
):
    """
    Project cell centers lifted to the given heights into feature coordinates.

    Args:
        heights (Tensor): (B, H', W') heights on `spec`

    Returns:
        tuple: (B, H'·W', 2) feature-pixel coordinates and (B, H'·W') validity
    """
    B = heights.shape[0]
    xy = torch.as_tensor(grid_points(spec, np.zeros(spec.shape))[..., :2], dtype=heights.dtype)
    refs, valid = [], []
    for b in range(B):
        pts = torch.cat([xy, heights[b].unsqueeze(-1)], dim=-1).reshape(-1, 3)
        uv, ok = project_points_torch(pts, calibs[b])
        refs.append(uv / stride)
        valid.append(ok)
    return torch.stack(refs), torch.stack(valid)


class TransformLayer(nn.Module):
    def __init__(self, channels: int, heads: int, points: int, ffn_channels: int):
        super().__init__()
        self.self_attn = MultiHeadSelfAttention(channels, heads)
        self.norm1 = nn.LayerNorm(channels)
        self.cross_attn = DeformableCrossAttention(channels, heads, points)
        self.norm2 = nn.LayerNorm(channels)
        self.ffn = nn.Sequential(nn.Linear(channels, ffn_channels), nn.ReLU(), nn.Linear(ffn_channels, channels))
        self.norm3 = nn.LayerNorm(channels)
        init_kaiming(self.ffn)

    def forward(self, query, pos, refs, ref_mask, feats) -> torch.Tensor:
        q = self.norm1(query + self.self_attn(query, pos))
        q = self.norm2(q + self.cross_attn(q, refs, feats, ref_mask))
        return self.norm3(q + self.ffn(q))


class ScaleTransform(nn.Module):
    """Query grid and transform layers for one front-view scale."""

    def __init__(self, cfg: ModelConfig, stride: int):
        super().__init__()
        self.stride = stride
        qspec = cfg.query_grid()
        self.query = nn.Parameter(torch.empty(qspec.rows * qspec.cols, cfg.query_channels))
        nn.init.normal_(self.query, std=0.02)
        self.input_proj = nn.Conv2d(cfg.feature_channels, cfg.query_channels, 1)
        self.layers = nn.ModuleList(
            TransformLayer(cfg.query_channels, cfg.heads, cfg.points, cfg.ffn_channels) for _ in range(cfg.layers)
        )
        init_kaiming(self.input_proj)

    def forward(self, feat, pos, refs, ref_mask) -> torch.Tensor:
        feats = self.input_proj(feat)
        q = self.query.unsqueeze(0).expand(feat.shape[0], -1, -1)
        for layer in self.layers:
            q = layer(q, pos, refs, ref_mask, feats)
        return q


class SpatialTransform(nn.Module):
    def __init__(self, cfg: ModelConfig, strides: Sequence[int] = (16, 32)):
        super().__init__()
        self.cfg = cfg
        self.qspec = cfg.query_grid()
        self.pe = PositionalEncoding(cfg.query_channels, self.qspec, cfg.pe_height_scale)
        self.scales = nn.ModuleList(ScaleTransform(cfg, s) for s in strides)

    def query_heights(self, heights: torch.Tensor) -> torch.Tensor:
        ds = self.cfg.query_downsample
        if ds == 1:
            return heights
        return F.avg_pool2d(heights.unsqueeze(1), ds).squeeze(1)

    def forward(
        self,
        pyramid: FeaturePyramid,
        heights: torch.Tensor,
        calibs: Sequence[CameraCalibration],
    ) -> torch.Tensor:
        """
        Returns:
            Tensor: F_BEV (B, scales·C_q, H', W')
        """
        qh = self.query_heights(heights)
        B = qh.shape[0]
        s = self.qspec
        xs = torch.as_tensor(s.x_centers(), dtype=qh.dtype)
        ys = torch.as_tensor(s.y_centers(), dtype=qh.dtype)
        gx, gy = torch.meshgrid(xs, ys, indexing="ij")
        pos = self.pe(gx.expand(B, -1, -1), gy.expand(B, -1, -1), qh).reshape(B, s.rows * s.cols, -1)
        per_scale: List[torch.Tensor] = []
        for scale in self.scales:
            feat = pyramid.level(scale.stride)
            refs, valid = reference_points(qh, calibs, s, scale.stride)
            q = scale(feat, pos, refs, valid)
            per_scale.append(q.transpose(1, 2).reshape(B, -1, s.rows, s.cols))
        f_bev = concat(per_scale, dim=1)
        if self.cfg.query_downsample > 1:
            f_bev = F.interpolate(f_bev, size=self.cfg.grid.shape, mode="bilinear", align_corners=False)
        return f_bev


def spatial_transform(module: SpatialTransform, pyramid: FeaturePyramid, heightmap, calib) -> torch.Tensor:
    """Single-sample wrapper taking a Heightmap."""
    heights = torch.as_tensor(heightmap.values, dtype=pyramid.finest.feat.dtype).unsqueeze(0)
    return module(pyramid, heights, [calib])
