"""
BEV Service Module

Grid arithmetic and the multi-slope heightmap anchors:
- Cell binning and cell centers
- Anchor heightmaps H(x) = x·tan(theta)
- Projection of anchor grids into feature-map coordinates
"""

import logging
import math
from typing import Tuple

import numpy as np

from heightlane.bev.schemas import MAX_ANCHOR_SLOPE_DEG, AnchorProjection, BevGridSpec, Heightmap
from heightlane.exceptions import OutOfGrid, ShapeMismatch, SlopeOutOfRange
from heightlane.geometry.schemas import CameraCalibration
from heightlane.geometry.service import project_points

logger = logging.getLogger(__name__)


def slope_height(x, theta_deg: float):
    """Height of a constant longitudinal slope through the ego origin."""
    return np.asarray(x, dtype=np.float64) * math.tan(math.radians(theta_deg))


def make_height_anchor(spec: BevGridSpec, theta: float) -> Heightmap:
    """
    Heightmap anchor with constant longitudinal slope theta (degrees).

    Raises:
        SlopeOutOfRange: If |theta| >= 45 degrees
    """
    if not abs(theta) < MAX_ANCHOR_SLOPE_DEG:
        raise SlopeOutOfRange(f"anchor slope {theta} deg outside (-45, 45)")
    column = slope_height(spec.x_centers(), theta)
    values = np.repeat(column[:, None], spec.cols, axis=1)
    return Heightmap(spec=spec, values=values)


def grid_points(spec: BevGridSpec, heights: np.ndarray) -> np.ndarray:
    """(H', W', 3) ego points at cell centers with the given heights."""
    xs, ys = np.meshgrid(spec.x_centers(), spec.y_centers(), indexing="ij")
    return np.stack([xs, ys, np.asarray(heights, dtype=np.float64)], axis=-1)


def feature_stride(feat_shape: Tuple[int, int], img_shape: Tuple[int, int]) -> int:
    h, w = feat_shape
    H, W = img_shape
    if H % h or W % w or H // h != W // w:
        raise ShapeMismatch(f"feature shape {feat_shape} is not an integer stride of image {img_shape}")
    return H // h


def project_heightmap_grid(
    hm: Heightmap,
    calib: CameraCalibration,
    feat_shape: Tuple[int, int],
    img_shape: Tuple[int, int],
) -> AnchorProjection:
    """
    Project every cell (x, y, H[x, y]) into feature-map pixel coordinates.

    Cells behind the camera or outside [0, w-1] x [0, h-1] are flagged invalid.
    """
    stride = feature_stride(feat_shape, img_shape)
    u, v, _, in_front = project_points(grid_points(hm.spec, hm.values), calib)
    u = u / stride
    v = v / stride
    h, w = feat_shape
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    return AnchorProjection(u=u, v=v, valid=in_front & inside, stride=stride)


def project_anchor_grid(
    anchor: Heightmap,
    calib: CameraCalibration,
    feat_shape: Tuple[int, int],
    img_shape: Tuple[int, int],
) -> AnchorProjection:
    """Feature-map coordinates of an anchor's cells, i.e. image pixels divided by the stride."""
    return project_heightmap_grid(anchor, calib, feat_shape, img_shape)


def cell_of(spec: BevGridSpec, x: float, y: float) -> Tuple[int, int]:
    """
    Floor-bin a metric point into the half-open grid extent.

    Raises:
        OutOfGrid: If (x, y) falls outside [x_min, x_max) x [y_min, y_max)
    """
    i = math.floor((x - spec.x_min) / spec.resolution)
    j = math.floor((y - spec.y_min) / spec.resolution)
    if not (0 <= i < spec.rows and 0 <= j < spec.cols):
        raise OutOfGrid(f"point ({x}, {y}) is outside the BEV grid")
    return i, j


def cells_of(spec: BevGridSpec, x: np.ndarray, y: np.ndarray):
    """Vectorized cell_of: returns (i, j, inside) arrays."""
    i = np.floor((np.asarray(x) - spec.x_min) / spec.resolution).astype(np.int64)
    j = np.floor((np.asarray(y) - spec.y_min) / spec.resolution).astype(np.int64)
    inside = (i >= 0) & (i < spec.rows) & (j >= 0) & (j < spec.cols)
    return i, j, inside
