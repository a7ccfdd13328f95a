"""
Ground Truth Service Module

Dense GT heightmaps from accumulated ground point clouds:
- Sweep loading and accumulation into the scene frame
- Robust per-cell rasterization (median) in the labeled ego frame
- Gap filling and QA statistics
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from heightlane.bev.schemas import BevGridSpec, Heightmap
from heightlane.bev.service import cells_of
from heightlane.exceptions import AllUnknown, EmptyCloud, ParseError
from heightlane.groundtruth.ply import read_ply_points
from heightlane.groundtruth.schemas import GroundCloud, HeightmapQA, SweepManifest, as_rigid

logger = logging.getLogger(__name__)

def load_manifest(path: Path) -> SweepManifest:
    """
    Read a sweep manifest; relative point paths resolve against the manifest folder.

    Raises:
        ParseError: If the JSON is malformed
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        manifest = SweepManifest.model_validate(data)
    except (OSError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    for entry in manifest.sweeps:
        p = Path(entry.points)
        if not p.is_absolute():
            entry.points = str(path.parent / p)
    return manifest


def transform_points(points: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    return points @ matrix[:3, :3].T + matrix[:3, 3]


def _load_sweep(entry, z_band: float) -> np.ndarray:
    pose = entry.matrix
    pts = transform_points(read_ply_points(entry.points), pose)
    keep = pts[:, 2] <= pose[2, 3] + z_band
    if not keep.all():
        logger.debug("%s: dropped %d points above the z band", entry.points, int((~keep).sum()))
    return pts[keep]


def accumulate_sweeps(manifest: SweepManifest, workers: int = 4, z_band: Optional[float] = None) -> GroundCloud:
    """
    Concatenate all sweeps transformed into the scene frame, in manifest order.

    Points more than z_band (default: the manifest's) above their sweep's sensor
    height are dropped.

    Raises:
        ParseError: If a point file cannot be read
        NonRigidTransform: If a sweep pose is not rigid
        ValueError: If the z band is not positive
    """
    for entry in manifest.sweeps:
        entry.matrix  # validate every pose before any I/O
    band = manifest.z_band if z_band is None else z_band
    if band <= 0:
        raise ValueError(f"z band must be positive, got {band}")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        parts = list(pool.map(partial(_load_sweep, z_band=band), manifest.sweeps))
    cloud = np.concatenate(parts, axis=0) if parts else np.zeros((0, 3))
    logger.info("accumulated %d points from %d sweeps", len(cloud), len(parts))
    return GroundCloud(points=cloud)


def rasterize_heightmap(cloud: GroundCloud, spec: BevGridSpec, ego_pose) -> Heightmap:
    """
    Median height per cell of the cloud expressed in the labeled ego frame.

    Args:
        cloud (GroundCloud): Scene-frame ground points
        spec (BevGridSpec): Target grid
        ego_pose: 4x4 ego-to-scene transform of the labeled frame

    Returns:
        Heightmap: Median heights, NaN in empty cells

    Raises:
        EmptyCloud: If the cloud has no points
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot rasterize an empty ground cloud")
    pose = as_rigid(ego_pose)
    ego = transform_points(cloud.points, np.linalg.inv(pose))
    i, j, inside = cells_of(spec, ego[:, 0], ego[:, 1])
    values = np.full(spec.shape, np.nan)
    if inside.any():
        labels = i[inside] * spec.cols + j[inside] + 1
        occupied = np.unique(labels)
        medians = ndimage.median(ego[inside, 2], labels=labels, index=occupied)
        values.reshape(-1)[occupied - 1] = np.asarray(medians, dtype=np.float64)
    return Heightmap(spec=spec, values=values)


def _interpolate_inner(line: np.ndarray) -> None:
    known = np.isfinite(line)
    if known.sum() < 2:
        return
    idx = np.arange(line.size)
    first, last = idx[known][0], idx[known][-1]
    gaps = ~known & (idx > first) & (idx < last)
    if gaps.any():
        line[gaps] = np.interp(idx[gaps], idx[known], line[known])


def fill_gaps(hm: Heightmap) -> Heightmap:
    """
    Replace NaN cells: linear along rows of the longitudinal axis, then lateral,
    then nearest finite value outside the interpolated support.

    Raises:
        AllUnknown: If no cell is finite
    """
    values = np.array(hm.values, dtype=np.float64)
    if not np.isfinite(values).any():
        raise AllUnknown("heightmap has no finite cell to fill from")
    if not np.isnan(values).any():
        return Heightmap(spec=hm.spec, values=values)
    for j in range(values.shape[1]):
        _interpolate_inner(values[:, j])
    for i in range(values.shape[0]):
        _interpolate_inner(values[i, :])
    unknown = np.isnan(values)
    if unknown.any():
        nearest = ndimage.distance_transform_edt(unknown, return_distances=False, return_indices=True)
        values = values[tuple(nearest)]
    return Heightmap(spec=hm.spec, values=values)


def heightmap_qa(raw: Heightmap) -> HeightmapQA:
    """Coverage statistics of a pre-fill heightmap."""
    known = np.isfinite(raw.values)
    finite = raw.values[known]
    return HeightmapQA(
        occupied_fraction=float(known.mean()),
        min_height=float(finite.min()) if finite.size else float("nan"),
        max_height=float(finite.max()) if finite.size else float("nan"),
        row_coverage=[float(x) for x in known.mean(axis=1)],
    )


def build_gt_heightmap(
    manifest: SweepManifest, spec: BevGridSpec, workers: int = 4, z_band: Optional[float] = None
):
    """
    Full pipeline: accumulate, rasterize in the target ego frame, fill.

    Returns:
        tuple: (filled Heightmap, HeightmapQA of the raw raster)
    """
    cloud = accumulate_sweeps(manifest, workers=workers, z_band=z_band)
    raw = rasterize_heightmap(cloud, spec, manifest.target_matrix)
    qa = heightmap_qa(raw)
    logger.info("rasterized %.1f%% of %d cells", 100.0 * qa.occupied_fraction, spec.rows * spec.cols)
    return fill_gaps(raw), qa


def write_qa(qa: HeightmapQA, path: Path, extra: Optional[dict] = None) -> None:
    data = qa.model_dump()
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2), encoding="utf-8")
