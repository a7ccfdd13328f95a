"""
Synthetic accumulated ground clouds for the GT heightmap builder: points sampled
from the analytic surface, thinned toward the far range, split across sweeps
with known poses.
"""

import json
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from heightlane.bev.schemas import BevGridSpec
from heightlane.exceptions import SpecInvalid
from heightlane.geometry.service import rigid_transform
from heightlane.groundtruth.ply import write_ply_points
from heightlane.groundtruth.schemas import SweepManifest
from heightlane.groundtruth.service import load_manifest, transform_points
from heightlane.synth.schemas import CloudRegion, HeightProfile
from heightlane.synth.service import profile_height

logger = logging.getLogger(__name__)

def sample_ground(
    profile: HeightProfile,
    grid: BevGridSpec,
    rng: np.random.Generator,
    points_per_cell: int = 8,
    noise_sigma: float = 0.0,
    dropout: float = 0.0,
    far_sparsity: float = 0.5,
    holes: Sequence[CloudRegion] = (),
) -> np.ndarray:
    """
    Ego-frame ground points over the grid footprint.

    A point at distance x survives with probability
    (1 - dropout)·(1 - far_sparsity·(x - x_min)/(x_max - x_min)); every point in a
    hole is dropped.
    """
    n = grid.rows * grid.cols * points_per_cell
    x = rng.uniform(grid.x_min, grid.x_max, n)
    y = rng.uniform(grid.y_min, grid.y_max, n)
    z = profile_height(profile, x)
    if noise_sigma > 0:
        z = z + rng.normal(0.0, noise_sigma, n)
    keep_prob = (1.0 - dropout) * (1.0 - far_sparsity * (x - grid.x_min) / (grid.x_max - grid.x_min))
    keep = rng.random(n) < keep_prob
    for hole in holes:
        keep &= ~(
            (x >= hole.x_range[0]) & (x < hole.x_range[1]) & (y >= hole.y_range[0]) & (y < hole.y_range[1])
        )
    return np.stack([x[keep], y[keep], z[keep]], axis=1)


def sweep_segments(grid: BevGridSpec, sweeps: int) -> np.ndarray:
    """Boundaries of the equal longitudinal stretches each sweep observes."""
    return np.linspace(grid.x_min, grid.x_max, sweeps + 1)


def sweep_pose(profile: HeightProfile, grid: BevGridSpec, sweeps: int, index: int) -> np.ndarray:
    """Sensor pose of sweep `index`, on the road surface at the middle of its stretch."""
    edges = sweep_segments(grid, sweeps)
    x = 0.5 * (edges[index] + edges[index + 1])
    return rigid_transform(np.eye(3), [x, 0.0, float(profile_height(profile, x))])


def generate_ground_cloud(
    profile: HeightProfile,
    grid: BevGridSpec,
    out_dir: Path,
    sweeps: int = 3,
    noise_sigma: float = 0.0,
    dropout: float = 0.0,
    seed: int = 0,
    points_per_cell: int = 8,
    far_sparsity: float = 0.5,
    holes: Sequence[CloudRegion] = (),
) -> SweepManifest:
    """
    Write one binary PLY per sweep plus manifest.json into out_dir.

    Sweeps sit at even spacing along the road; each keeps the points of its own
    longitudinal stretch, stored in the sweep's frame. The labeled ego frame is the
    scene frame (identity target pose).

    Raises:
        SpecInvalid: If sweeps < 1 or a fraction is outside [0, 1]
    """
    if sweeps < 1:
        raise SpecInvalid("need at least one sweep")
    if not (0.0 <= dropout <= 1.0 and 0.0 <= far_sparsity <= 1.0):
        raise SpecInvalid("dropout and far_sparsity must lie in [0, 1]")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    points = sample_ground(profile, grid, rng, points_per_cell, noise_sigma, dropout, far_sparsity, holes)
    owner = np.clip(np.searchsorted(sweep_segments(grid, sweeps), points[:, 0], side="right") - 1, 0, sweeps - 1)
    entries = []
    for k in range(sweeps):
        pose = sweep_pose(profile, grid, sweeps, k)
        local = transform_points(points[owner == k], np.linalg.inv(pose))
        name = f"sweep_{k:03d}.ply"
        write_ply_points(local, out_dir / name)
        entries.append({"points": name, "pose": pose.reshape(-1).tolist()})
        logger.debug("sweep %d: %d points", k, len(local))
    manifest = {
        "sweeps": entries,
        "target_pose": np.eye(4).reshape(-1).tolist(),
        "frame_note": "scene frame = labeled ego frame; poses map sweep frames into it",
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    logger.info("wrote %d ground points in %d sweeps to %s", len(points), sweeps, out_dir)
    return load_manifest(out_dir / "manifest.json")


def write_profile(profile: HeightProfile, path: Path, grid: Optional[BevGridSpec] = None) -> None:
    """Record the analytic profile next to a generated cloud for later comparison."""
    data = {"profile": profile.model_dump()}
    if grid is not None:
        data["grid"] = grid.model_dump()
    Path(path).write_text(json.dumps(data, indent=2), encoding="utf-8")
