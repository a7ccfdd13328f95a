"""
Keypoint decoding: confident cells become 3D keypoints, grouped into lane
instances by greedy embedding clustering.
"""

from typing import List

import numpy as np
import torch

from heightlane.bev.schemas import BevGridSpec
from heightlane.diffcore.ops import LOGIT_CLAMP
from heightlane.metrics.schemas import Lane3D
from heightlane.model.schemas import LaneHeadOutput


def _sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, -LOGIT_CLAMP, LOGIT_CLAMP)
    return 1.0 / (1.0 + np.exp(-x))


def _numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().to(torch.float64).cpu().numpy()


def _batch1(a: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(a, dtype=torch.float64).unsqueeze(0)


def decode_lanes(
    out: LaneHeadOutput,
    spec: BevGridSpec,
    conf_thresh: float = 0.5,
    embed_margin: float = 1.5,
    index: int = 0,
) -> List[Lane3D]:
    """
    Decode one batch item of lane rasters into 3D lanes.

    Cells with sigmoid(confidence) >= conf_thresh are visited by decreasing confidence;
    each unassigned cell seeds a cluster that absorbs every unassigned cell whose
    embedding lies within embed_margin of the seed's. Within a cluster only the most
    confident cell of each row becomes a keypoint, so a lane yields at most one point
    per longitudinal station; the keypoint is
    (x_center(i), y_left(j) + sigmoid(offset)·res, H[i, j]). Clusters with fewer than
    two keypoints are dropped.

    Returns:
        list: Lane3D instances ordered by mean lateral position
    """
    prob = _sigmoid(_numpy(out.confidence[index]))
    offset = _sigmoid(_numpy(out.offset[index]))
    emb = _numpy(out.embedding[index])
    height = _numpy(out.height[index])

    rows, cols = np.nonzero(prob >= conf_thresh)
    if rows.size == 0:
        return []
    # descending confidence, ties by raster order
    order = np.lexsort((rows * spec.cols + cols, -prob[rows, cols]))
    rows, cols = rows[order], cols[order]
    vectors = emb[:, rows, cols].T
    cluster = np.full(rows.size, -1, dtype=np.int64)
    n_clusters = 0
    for seed in range(rows.size):
        if cluster[seed] >= 0:
            continue
        dist = np.linalg.norm(vectors - vectors[seed], axis=1)
        members = (cluster < 0) & (dist < embed_margin)
        members[seed] = True
        cluster[members] = n_clusters
        n_clusters += 1

    x_centers = spec.x_centers()
    lanes = []
    for k in range(n_clusters):
        idx = np.nonzero(cluster == k)[0]
        # idx is in descending confidence, so the first hit per row wins
        _, first = np.unique(rows[idx], return_index=True)
        keep = idx[first]
        if keep.size < 2:
            continue
        i, j = rows[keep], cols[keep]
        x = x_centers[i]
        y = spec.y_min + j * spec.resolution + offset[i, j] * spec.resolution
        z = height[i, j]
        pts = np.stack([x, y, z], axis=1)
        pts = pts[np.argsort(pts[:, 0], kind="stable")]
        lanes.append(pts)
    lanes.sort(key=lambda p: float(p[:, 1].mean()))
    return [Lane3D(points=p.tolist(), instance_id=n + 1) for n, p in enumerate(lanes)]


def targets_as_outputs(targets, embed_spacing: float = 6.0) -> LaneHeadOutput:
    """
    Ideal network output for a BevTargets: saturated confidence logits, exact
    offset logits, instance k embedded at (k·embed_spacing, 0, ...), GT heights.
    """
    conf = np.where(targets.confidence > 0.5, LOGIT_CLAMP, -LOGIT_CLAMP)
    x = np.clip(targets.offset, 1e-9, 1.0 - 1e-9)
    offset = np.log(x) - np.log1p(-x)
    emb = np.zeros((2,) + targets.instance.shape)
    emb[0] = targets.instance * embed_spacing
    height = _batch1(targets.heightmap.values)
    return LaneHeadOutput(
        confidence=_batch1(conf),
        offset=_batch1(offset),
        embedding=_batch1(emb),
        height=height,
        predicted_height=height,
    )
