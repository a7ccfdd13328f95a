"""
Losses Service Module

Training objective of the lane network:
- Confidence: per-cell BCE plus soft IoU
- Lateral offset: masked BCE with the target fraction as label
- Embedding: discriminative pull/push loss
- Heightmap: L1
- 2D auxiliary: soft IoU on the stride-16 lane mask

Every term sums over cells and averages over leading batch dimensions, so a
single (H', W') raster yields the plain per-sample sum.
"""

from itertools import combinations
from typing import Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from heightlane.bev.schemas import Heightmap
from heightlane.diffcore.ops import LOGIT_CLAMP
from heightlane.exceptions import GridMismatch, NonFinite, ShapeMismatch
from heightlane.losses.schemas import BevTargets, LossParts, LossWeights, TargetBatch
from heightlane.model.schemas import NetworkOutput


def _check_shapes(name: str, a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{name}: prediction {tuple(a.shape)} vs target {tuple(b.shape)}")


def _per_item(x: torch.Tensor) -> torch.Tensor:
    """(..., H, W) -> (N,) cell sums, N = product of leading dims (1 when absent)."""
    return x.reshape(-1, x.shape[-2] * x.shape[-1]).sum(dim=1)


def bce_with_label(logits: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
    """Elementwise -(t·log σ(z) + (1 - t)·log(1 - σ(z))) with z clamped to ±15."""
    z = logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    return -(label * F.logsigmoid(z) + (1.0 - label) * F.logsigmoid(-z))


def soft_iou_loss(prob: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """
    Per-item 1 - I / U with I = Σ p·t and U = Σ p + Σ t - I.

    An item whose prediction and target are both empty (U = 0) costs 0.
    """
    inter = _per_item(prob * target)
    union = _per_item(prob) + _per_item(target) - inter
    empty = union <= 0
    ratio = inter / torch.where(empty, torch.ones_like(union), union)
    return torch.where(empty, torch.zeros_like(union), 1.0 - ratio)


def confidence_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """
    Args:
        logits (Tensor): (..., H', W') confidence logits
        target (Tensor): Same shape, values in {0, 1}

    Returns:
        Tensor: Scalar BCE sum plus soft IoU, averaged over the batch

    Raises:
        ShapeMismatch: If the shapes differ
    """
    _check_shapes("confidence", logits, target)
    target = target.to(logits.dtype)
    bce = _per_item(bce_with_label(logits, target))
    prob = torch.sigmoid(logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
    return (bce + soft_iou_loss(prob, target)).mean()


def offset_loss(offset_logits: torch.Tensor, target: torch.Tensor, lane_mask: torch.Tensor) -> torch.Tensor:
    """
    Masked BCE with the offset target as the label and the sigmoided prediction as
    the probability. An empty mask gives 0.
    """
    _check_shapes("offset", offset_logits, target)
    _check_shapes("offset mask", offset_logits, lane_mask)
    mask = lane_mask.to(offset_logits.dtype)
    per_cell = bce_with_label(offset_logits, target.to(offset_logits.dtype)) * mask
    return _per_item(per_cell).mean()


def _embedding_loss_single(
    emb: torch.Tensor, instance: torch.Tensor, delta_v: float, delta_d: float, w_var: float, w_dist: float
) -> torch.Tensor:
    ids = [int(k) for k in torch.unique(instance).tolist() if k > 0]
    zero = emb.sum() * 0.0
    if not ids:
        return zero
    flat = emb.reshape(emb.shape[0], -1)
    labels = instance.reshape(-1)
    pull_terms, centroids = [], []
    for k in ids:
        members = flat[:, labels == k]
        mu = members.mean(dim=1, keepdim=True)
        centroids.append(mu[:, 0])
        dist = ((members - mu) ** 2).sum(dim=0).clamp(min=1e-12).sqrt()
        pull_terms.append((F.relu(dist - delta_v) ** 2).mean())
    pull = torch.stack(pull_terms).mean()
    if len(centroids) < 2:
        return w_var * pull
    push_terms = [
        F.relu(delta_d - ((a - b) ** 2).sum().clamp(min=1e-12).sqrt()) ** 2
        for a, b in combinations(centroids, 2)
    ]
    push = torch.stack(push_terms).mean()
    return w_var * pull + w_dist * push


def embedding_loss(
    embeddings: torch.Tensor,
    instance_map: torch.Tensor,
    delta_v: float = 0.5,
    delta_d: float = 3.0,
    w_var: float = 1.0,
    w_dist: float = 1.0,
) -> torch.Tensor:
    """
    Discriminative pull/push loss.

    pull: mean over instances of the mean squared hinge of ||e - mu_k|| - delta_v.
    push: mean over instance pairs of the squared hinge of delta_d - ||mu_a - mu_b||.

    Args:
        embeddings (Tensor): (E, H', W') or (B, E, H', W')
        instance_map (Tensor): (H', W') or (B, H', W'), 0 = background

    Returns:
        Tensor: w_var·pull + w_dist·push, averaged over the batch
    """
    if embeddings.dim() == 3:
        embeddings, instance_map = embeddings.unsqueeze(0), instance_map.unsqueeze(0)
    if embeddings.shape[0] != instance_map.shape[0] or embeddings.shape[2:] != instance_map.shape[1:]:
        raise ShapeMismatch(f"embedding {tuple(embeddings.shape)} vs instances {tuple(instance_map.shape)}")
    terms = [
        _embedding_loss_single(e, m, delta_v, delta_d, w_var, w_dist) for e, m in zip(embeddings, instance_map)
    ]
    return torch.stack(terms).mean()


def height_loss(
    pred: Union[Heightmap, torch.Tensor], gt: Union[Heightmap, torch.Tensor]
) -> Union[float, torch.Tensor]:
    """
    L1 between predicted and GT heights, summed over cells.

    Heightmap arguments give a float; tensors of shape (..., H', W') give a
    differentiable scalar averaged over the batch.

    Raises:
        GridMismatch: If two Heightmaps live on different grids
        ShapeMismatch: If two tensors differ in shape
    """
    if isinstance(pred, Heightmap) and isinstance(gt, Heightmap):
        if pred.spec != gt.spec:
            raise GridMismatch(f"heightmap grids differ: {pred.spec} vs {gt.spec}")
        return float(np.abs(gt.values - pred.values).sum())
    if isinstance(pred, Heightmap) or isinstance(gt, Heightmap):
        raise GridMismatch("height_loss needs two Heightmaps or two tensors")
    _check_shapes("height", pred, gt)
    return _per_item((gt.to(pred.dtype) - pred).abs()).mean()


def aux_2d_loss(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Soft IoU of the sigmoided 2D head against the stride-16 lane mask."""
    if logits.dim() == mask.dim() + 1:
        logits = logits.squeeze(-3)
    _check_shapes("aux2d", logits, mask)
    prob = torch.sigmoid(logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
    return soft_iou_loss(prob, mask.to(prob.dtype)).mean()


def total_loss(parts: LossParts, weights: LossWeights) -> torch.Tensor:
    """
    Weighted sum of the five loss parts.

    Raises:
        NonFinite: If any part is NaN or infinite
    """
    for name, value in parts.as_dict().items():
        if not np.isfinite(value):
            raise NonFinite(f"loss part {name} is not finite ({value})")
    return (
        weights.confidence * parts.confidence
        + weights.offset * parts.offset
        + weights.embedding * parts.embedding
        + weights.height * parts.height
        + weights.aux2d * parts.aux2d
    )


def stack_targets(targets: Sequence[BevTargets], dtype: torch.dtype = torch.float32) -> TargetBatch:
    return TargetBatch(
        confidence=torch.as_tensor(np.stack([t.confidence for t in targets]), dtype=dtype),
        offset=torch.as_tensor(np.stack([t.offset for t in targets]), dtype=dtype),
        instance=torch.as_tensor(np.stack([t.instance for t in targets]), dtype=torch.int64),
        height=torch.as_tensor(np.stack([t.heightmap.values for t in targets]), dtype=dtype),
        mask2d=torch.as_tensor(np.stack([t.mask2d for t in targets]), dtype=dtype),
    )


def loss_parts(out: NetworkOutput, batch: TargetBatch, weights: LossWeights) -> LossParts:
    lanes = out.lanes
    return LossParts(
        confidence=confidence_loss(lanes.confidence, batch.confidence),
        offset=offset_loss(lanes.offset, batch.offset, batch.confidence),
        embedding=embedding_loss(
            lanes.embedding, batch.instance, weights.delta_v, weights.delta_d, weights.var, weights.dist
        ),
        height=height_loss(lanes.predicted_height, batch.height),
        aux2d=aux_2d_loss(out.aux2d, batch.mask2d),
    )
