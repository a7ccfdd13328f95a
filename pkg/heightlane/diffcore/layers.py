"""nn.Module wrappers owning the parameters of the functional operators."""

import math
from typing import Optional

import torch
from torch import nn

from heightlane.diffcore import ops
from heightlane.exceptions import ShapeMismatch


def init_kaiming(module: nn.Module) -> None:
    """Kaiming-uniform weights and zero biases for every conv/linear below module."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5))
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def group_count(channels: int, preferred: int = 8) -> int:
    groups = min(preferred, channels)
    while channels % groups:
        groups -= 1
    return groups


class ConvGNReLU(nn.Sequential):
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1):
        super().__init__(
            nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2, bias=False),
            nn.GroupNorm(group_count(out_ch), out_ch),
            nn.ReLU(inplace=False),
        )


class MultiHeadSelfAttention(nn.Module):
    """Self-attention with the positional term on queries/keys only."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        if channels % heads:
            raise ShapeMismatch(f"channel width {channels} is not divisible by {heads} heads")
        self.heads = heads
        self.q_proj = nn.Linear(channels, channels)
        self.k_proj = nn.Linear(channels, channels)
        self.v_proj = nn.Linear(channels, channels)
        self.out_proj = nn.Linear(channels, channels)
        init_kaiming(self)

    def forward(self, tokens: torch.Tensor, pos: torch.Tensor, return_weights: bool = False):
        return ops.multi_head_self_attention(
            tokens,
            pos,
            self.heads,
            self.q_proj.weight,
            self.k_proj.weight,
            self.v_proj.weight,
            self.out_proj.weight,
            self.q_proj.bias,
            self.k_proj.bias,
            self.v_proj.bias,
            self.out_proj.bias,
            return_weights=return_weights,
        )


class DeformableCrossAttention(nn.Module):
    """
    Single-level deformable attention.

    Offset layers start at zero so the initial sampling happens at the reference points.
    """

    def __init__(self, channels: int, heads: int = 2, points: int = 4):
        super().__init__()
        if channels % heads:
            raise ShapeMismatch(f"channel width {channels} is not divisible by {heads} heads")
        self.heads = heads
        self.points = points
        self.value_proj = nn.Linear(channels, channels)
        self.sampling_offsets = nn.Linear(channels, heads * points * 2)
        self.attention_weights = nn.Linear(channels, heads * points)
        self.output_proj = nn.Linear(channels, channels)
        init_kaiming(self)
        nn.init.zeros_(self.sampling_offsets.weight)
        nn.init.zeros_(self.sampling_offsets.bias)

    def forward(
        self,
        queries: torch.Tensor,
        ref_points: torch.Tensor,
        feats: torch.Tensor,
        ref_mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        return ops.deformable_cross_attention(
            queries,
            ref_points,
            feats,
            self.heads,
            self.points,
            self.value_proj.weight,
            self.sampling_offsets.weight,
            self.attention_weights.weight,
            self.output_proj.weight,
            self.value_proj.bias,
            self.sampling_offsets.bias,
            self.attention_weights.bias,
            self.output_proj.bias,
            ref_mask=ref_mask,
        )
