"""Small residual CNN with the two-scale (stride 16 / 32) interface of ResNet-50."""

import torch
from torch import nn

from heightlane.diffcore.layers import ConvGNReLU, group_count, init_kaiming
from heightlane.exceptions import ShapeMismatch
from heightlane.model.schemas import FeatureLevel, FeaturePyramid, ModelConfig


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int):
        super().__init__()
        self.conv1 = ConvGNReLU(in_ch, out_ch, 3, stride)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.norm2 = nn.GroupNorm(group_count(out_ch), out_ch)
        self.shortcut = nn.Identity()
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.GroupNorm(group_count(out_ch), out_ch),
            )
        self.relu = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.relu(self.norm2(self.conv2(self.conv1(x))) + self.shortcut(x))


class Backbone(nn.Module):
    """Stem (stride 2) followed by four stride-2 stages; stages 3 and 4 are emitted."""

    STRIDES = (16, 32)

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.backbone_width
        widths = [w, 2 * w, 4 * w, 8 * w]
        self.stem = ConvGNReLU(3, w, 3, stride=2)
        stages = []
        in_ch = w
        for out_ch in widths:
            blocks = [BasicBlock(in_ch, out_ch, 2)]
            blocks += [BasicBlock(out_ch, out_ch, 1) for _ in range(cfg.backbone_blocks - 1)]
            stages.append(nn.Sequential(*blocks))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)
        c = cfg.feature_channels
        self.lateral16 = nn.Sequential(nn.Conv2d(widths[2], c, 1), nn.GroupNorm(group_count(c), c))
        self.lateral32 = nn.Sequential(nn.Conv2d(widths[3], c, 1), nn.GroupNorm(group_count(c), c))
        init_kaiming(self)

    def forward(self, image: torch.Tensor) -> FeaturePyramid:
        if image.dim() == 3:
            image = image.unsqueeze(0)
        if image.dim() != 4 or image.shape[1] != 3:
            raise ShapeMismatch(f"expected (B, 3, H, W) images, got {tuple(image.shape)}")
        H, W = image.shape[-2:]
        if H % 32 or W % 32:
            raise ShapeMismatch(f"image size {H}x{W} is not divisible by 32")
        x = self.stem(image)
        outs = []
        for stage in self.stages:
            x = stage(x)
            outs.append(x)
        return FeaturePyramid(
            levels=[
                FeatureLevel(stride=16, feat=self.lateral16(outs[2])),
                FeatureLevel(stride=32, feat=self.lateral32(outs[3])),
            ]
        )


def backbone_forward(backbone: Backbone, image: torch.Tensor) -> FeaturePyramid:
    return backbone(image)
