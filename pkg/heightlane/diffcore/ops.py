"""
Functional operators with the conventions used across the model.

Every operator accepts float32 or float64 tensors; gradients come from autograd.
Sampling coordinates are feature-map pixel coordinates (u along width, v along height).
"""

import math
from typing import Optional, Sequence

import torch
import torch.nn.functional as F

from heightlane.exceptions import ShapeMismatch

# Logits are clamped to this magnitude before any sigmoid/BCE.
LOGIT_CLAMP = 15.0


def conv2d(input: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None, stride: int = 1, padding: int = 0) -> torch.Tensor:
    """Cross-correlation over (N, C, H, W) inputs."""
    if input.dim() != 4 or weight.dim() != 4 or input.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"conv2d input {tuple(input.shape)} incompatible with weight {tuple(weight.shape)}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeMismatch(f"conv2d bias {tuple(bias.shape)} does not match {weight.shape[0]} outputs")
    return F.conv2d(input, weight, bias, stride=stride, padding=padding)


def linear(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    if x.shape[-1] != weight.shape[1]:
        raise ShapeMismatch(f"linear input width {x.shape[-1]} does not match weight {tuple(weight.shape)}")
    return F.linear(x, weight, bias)


def relu(x: torch.Tensor) -> torch.Tensor:
    return F.relu(x)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.softmax(x, dim=dim)


def group_norm(x: torch.Tensor, groups: int, weight=None, bias=None, eps: float = 1e-5) -> torch.Tensor:
    if x.shape[1] % groups:
        raise ShapeMismatch(f"{x.shape[1]} channels are not divisible into {groups} groups")
    return F.group_norm(x, groups, weight, bias, eps)


def max_pool(x: torch.Tensor, kernel: int, stride: Optional[int] = None, padding: int = 0) -> torch.Tensor:
    return F.max_pool2d(x, kernel, stride=stride, padding=padding)


def add(*xs: torch.Tensor) -> torch.Tensor:
    out = xs[0]
    for x in xs[1:]:
        if x.shape != out.shape:
            raise ShapeMismatch(f"cannot add {tuple(x.shape)} to {tuple(out.shape)}")
        out = out + x
    return out


def concat(xs: Sequence[torch.Tensor], dim: int) -> torch.Tensor:
    return torch.cat(list(xs), dim=dim)


def clamp_logits(x: torch.Tensor) -> torch.Tensor:
    return x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)


def pixel_to_grid(coords: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """Pixel (u, v) to grid_sample's [-1, 1] range with align_corners=True."""
    if h < 2 or w < 2:
        raise ShapeMismatch(f"feature map {h}x{w} is too small to sample (need at least 2x2)")
    scale = coords.new_tensor([2.0 / (w - 1), 2.0 / (h - 1)])
    # far off-image locations contribute nothing either way; keep them bounded
    return (coords * scale - 1.0).clamp(-2.0, 2.0)


def bilinear_sample_batched(feat: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """
    Batched bilinear sampling.

    Args:
        feat (Tensor): (B, C, h, w) features
        coords (Tensor): (B, M, 2) pixel coordinates (u, v)

    Returns:
        Tensor: (B, M, C) samples, zero-padded outside [0, w-1] x [0, h-1]
    """
    if feat.dim() != 4 or coords.dim() != 3 or coords.shape[-1] != 2 or coords.shape[0] != feat.shape[0]:
        raise ShapeMismatch(f"cannot sample {tuple(feat.shape)} at {tuple(coords.shape)}")
    h, w = feat.shape[-2:]
    grid = pixel_to_grid(coords, h, w).unsqueeze(1)
    out = F.grid_sample(feat, grid, mode="bilinear", padding_mode="zeros", align_corners=True)
    return out.squeeze(2).transpose(1, 2)


def bilinear_sample(feat: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """(C, h, w) features sampled at (M, 2) pixel coordinates -> (M, C)."""
    if feat.dim() != 3 or coords.dim() != 2:
        raise ShapeMismatch(f"cannot sample {tuple(feat.shape)} at {tuple(coords.shape)}")
    return bilinear_sample_batched(feat.unsqueeze(0), coords.unsqueeze(0)).squeeze(0)


def _batched_tokens(x: torch.Tensor):
    if x.dim() == 2:
        return x.unsqueeze(0), True
    if x.dim() == 3:
        return x, False
    raise ShapeMismatch(f"expected (L, C) or (B, L, C) tokens, got {tuple(x.shape)}")


def multi_head_self_attention(
    tokens: torch.Tensor,
    pos: torch.Tensor,
    heads: int,
    w_q: torch.Tensor,
    w_k: torch.Tensor,
    w_v: torch.Tensor,
    w_o: torch.Tensor,
    b_q: Optional[torch.Tensor] = None,
    b_k: Optional[torch.Tensor] = None,
    b_v: Optional[torch.Tensor] = None,
    b_o: Optional[torch.Tensor] = None,
    return_weights: bool = False,
):
    """
    Scaled dot-product self-attention where queries and keys see tokens + pos and
    values see the bare tokens.

    Args:
        tokens (Tensor): (L, C) or (B, L, C)
        pos (Tensor): Positional term, same shape as tokens
        heads (int): Number of heads; C must be divisible by it

    Returns:
        Tensor: Attended tokens (same shape as input), plus the (B, heads, L, L)
        attention weights when return_weights is set
    """
    x, squeeze = _batched_tokens(tokens)
    p, _ = _batched_tokens(pos)
    if p.shape != x.shape:
        raise ShapeMismatch(f"positional term {tuple(pos.shape)} does not match tokens {tuple(tokens.shape)}")
    B, L, C = x.shape
    if C % heads:
        raise ShapeMismatch(f"channel width {C} is not divisible by {heads} heads")
    d = C // heads
    qk_in = x + p
    q = linear(qk_in, w_q, b_q).view(B, L, heads, d).transpose(1, 2)
    k = linear(qk_in, w_k, b_k).view(B, L, heads, d).transpose(1, 2)
    v = linear(x, w_v, b_v).view(B, L, heads, d).transpose(1, 2)
    attn = softmax(q @ k.transpose(-2, -1) / math.sqrt(d), dim=-1)
    out = (attn @ v).transpose(1, 2).reshape(B, L, C)
    out = linear(out, w_o, b_o)
    if squeeze:
        out = out.squeeze(0)
    return (out, attn) if return_weights else out


def deformable_cross_attention(
    queries: torch.Tensor,
    ref_points: torch.Tensor,
    feats: torch.Tensor,
    heads: int,
    points: int,
    w_value: torch.Tensor,
    w_offset: torch.Tensor,
    w_attn: torch.Tensor,
    w_out: torch.Tensor,
    b_value: Optional[torch.Tensor] = None,
    b_offset: Optional[torch.Tensor] = None,
    b_attn: Optional[torch.Tensor] = None,
    b_out: Optional[torch.Tensor] = None,
    ref_mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Single-level deformable attention in feature pixel coordinates.

    Per query and head, `points` offsets and weights are predicted from the query;
    the value map is sampled bilinearly at ref + offset and the softmaxed weights
    combine the samples. Queries with ref_mask False receive zero weight.

    Args:
        queries (Tensor): (L, C) or (B, L, C)
        ref_points (Tensor): (L, 2) or (B, L, 2) pixel coordinates (u, v)
        feats (Tensor): (C, h, w) or (B, C, h, w)
        ref_mask (Tensor, optional): (L,) or (B, L) boolean validity

    Returns:
        Tensor: Same shape as queries
    """
    q, squeeze = _batched_tokens(queries)
    ref, _ = _batched_tokens(ref_points)
    value_map = feats.unsqueeze(0) if feats.dim() == 3 else feats
    B, L, C = q.shape
    if value_map.dim() != 4 or value_map.shape[0] != B or value_map.shape[1] != C:
        raise ShapeMismatch(f"features {tuple(feats.shape)} do not match queries {tuple(queries.shape)}")
    if ref.shape != (B, L, 2):
        raise ShapeMismatch(f"reference points {tuple(ref_points.shape)} do not match queries {tuple(queries.shape)}")
    if C % heads:
        raise ShapeMismatch(f"channel width {C} is not divisible by {heads} heads")
    d = C // heads
    h, w = value_map.shape[-2:]

    value = linear(value_map.flatten(2).transpose(1, 2), w_value, b_value)
    value = value.view(B, h, w, heads, d).permute(0, 3, 4, 1, 2).reshape(B * heads, d, h, w)

    offsets = linear(q, w_offset, b_offset).view(B, L, heads, points, 2)
    weights = softmax(linear(q, w_attn, b_attn).view(B, L, heads, points), dim=-1)
    if ref_mask is not None:
        mask = ref_mask.unsqueeze(0) if ref_mask.dim() == 1 else ref_mask
        weights = weights * mask.to(weights.dtype)[:, :, None, None]

    locations = ref[:, :, None, None, :] + offsets
    grid = pixel_to_grid(locations, h, w).permute(0, 2, 1, 3, 4).reshape(B * heads, L, points, 2)
    sampled = F.grid_sample(value, grid, mode="bilinear", padding_mode="zeros", align_corners=True)
    weights = weights.permute(0, 2, 1, 3).reshape(B * heads, 1, L, points)
    out = (sampled * weights).sum(-1).view(B, heads * d, L).transpose(1, 2)
    out = linear(out, w_out, b_out)
    return out.squeeze(0) if squeeze else out
