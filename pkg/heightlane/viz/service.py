"""
Viz Service Module

Deterministic PNG renders:
- Heightmaps through a fixed 256-entry blue -> green -> red colormap
- Longitudinal height profiles of predicted and GT lanes
- BEV overlays of lanes drawn over a heightmap

Heightmap images put the far end (largest x) on the top row and +y (left) on the
left edge, as seen from above.
"""

import io
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from PIL import Image, ImageColor, ImageDraw

from heightlane.bev.schemas import BevGridSpec, Heightmap
from heightlane.diffcore.checkpoint import load_checkpoint, load_into
from heightlane.metrics.schemas import Lane3D
from heightlane.metrics.service import read_lanes
from heightlane.model.network import build_model
from heightlane.synth.dataset import load_scene
from heightlane.trainer.service import load_train_config, predict
from heightlane.viz.schemas import RenderJob

logger = logging.getLogger(__name__)

PROFILE_SIZE = (640, 360)
PROFILE_DPI = 100
PROFILE_AXES = (0.1, 0.12, 0.85, 0.8)  # left, bottom, width, height in figure fractions
UNKNOWN_COLOR = (0, 0, 0)
COLORBAR_WIDTH = 12


def _build_colormap() -> np.ndarray:
    """
    Entry k (t = k/255): blue (0,0,255) to green (0,255,0) over t in [0, 0.5],
    then green to red (255,0,0) over t in [0.5, 1], linear per channel.
    """
    t = np.arange(256) / 255.0
    s_low = np.clip(t / 0.5, 0.0, 1.0)
    s_high = np.clip((t - 0.5) / 0.5, 0.0, 1.0)
    lower = t <= 0.5
    r = np.where(lower, 0.0, s_high)
    g = np.where(lower, s_low, 1.0 - s_high)
    b = np.where(lower, 1.0 - s_low, 0.0)
    return np.round(np.stack([r, g, b], axis=1) * 255.0).astype(np.uint8)


COLORMAP = _build_colormap()


def colormap_index(values: np.ndarray, value_range: Tuple[float, float]) -> np.ndarray:
    lo, hi = value_range
    t = np.clip((np.asarray(values, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
    return np.round(np.nan_to_num(t) * 255.0).astype(np.int64)


def heightmap_rgb(hm: Heightmap, value_range: Tuple[float, float], scale: int = 1) -> np.ndarray:
    """(rows·scale, cols·scale, 3) uint8 raster, far end on top, NaN cells black."""
    values = hm.values[::-1, ::-1]
    rgb = COLORMAP[colormap_index(values, value_range)]
    rgb[~np.isfinite(values)] = UNKNOWN_COLOR
    if scale > 1:
        rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    return rgb


def _png(image: Image.Image) -> bytes:
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def render_heightmap(hm: Heightmap, value_range: Tuple[float, float], scale: int = 1) -> bytes:
    """
    PNG of a heightmap; values outside value_range are clamped to its ends.

    Raises:
        ValueError: If value_range is not ordered
    """
    if not value_range[0] < value_range[1]:
        raise ValueError("colormap range needs min < max")
    return _png(Image.fromarray(heightmap_rgb(hm, value_range, scale)))


def _colorbar(height: int) -> np.ndarray:
    idx = np.round(np.linspace(255, 0, height)).astype(np.int64)
    return np.repeat(COLORMAP[idx][:, None, :], COLORBAR_WIDTH, axis=1)


def render_heightmap_panel(
    maps: Sequence[Heightmap], value_range: Tuple[float, float], scale: int = 3
) -> bytes:
    """Heightmaps side by side (e.g. predicted | GT) followed by a colorbar strip, max on top."""
    tiles = [heightmap_rgb(hm, value_range, scale) for hm in maps]
    height = tiles[0].shape[0]
    gap = np.full((height, 4, 3), 255, dtype=np.uint8)
    parts: List[np.ndarray] = []
    for tile in tiles:
        parts.extend([tile, gap])
    parts.append(_colorbar(height))
    return _png(Image.fromarray(np.concatenate(parts, axis=1)))


def _profile_limits(lanes: Sequence[Lane3D], z_range: Optional[Tuple[float, float]]) -> Tuple[float, float]:
    if z_range is not None:
        return z_range
    zs = [p[2] for lane in lanes for p in lane.points]
    if not zs:
        return (-1.0, 1.0)
    lo, hi = min(zs), max(zs)
    return (lo - 0.5, hi + 0.5)


def profile_pixel(
    x: float, z: float, x_range: Tuple[float, float], z_range: Tuple[float, float], size=PROFILE_SIZE
) -> Tuple[float, float]:
    """Pixel (column, row) of data point (x, z) in a render_lanes_yz image."""
    left, bottom, width, height = PROFILE_AXES
    fx = left + (x - x_range[0]) / (x_range[1] - x_range[0]) * width
    fz = bottom + (z - z_range[0]) / (z_range[1] - z_range[0]) * height
    return fx * size[0], (1.0 - fz) * size[1]


def render_lanes_yz(
    pred: Sequence[Lane3D],
    gt: Sequence[Lane3D],
    x_range: Tuple[float, float] = (0.0, 100.0),
    z_range: Optional[Tuple[float, float]] = None,
    gt_color: str = "#1a9641",
    pred_color: str = "#d7191c",
) -> bytes:
    """
    Longitudinal distance vs. height of every lane, GT and prediction in distinct
    colors with a legend. The axes box sits at PROFILE_AXES so data coordinates map
    to pixels affinely (see profile_pixel).
    """
    z_range = _profile_limits(list(pred) + list(gt), z_range)
    fig = Figure(figsize=(PROFILE_SIZE[0] / PROFILE_DPI, PROFILE_SIZE[1] / PROFILE_DPI), dpi=PROFILE_DPI)
    FigureCanvasAgg(fig)
    ax = fig.add_axes(PROFILE_AXES)
    for lanes, color, label in ((gt, gt_color, "ground truth"), (pred, pred_color, "prediction")):
        for k, lane in enumerate(lanes):
            pts = lane.as_array()
            ax.plot(pts[:, 0], pts[:, 2], color=color, linewidth=1.5, label=label if k == 0 else None)
    ax.set_xlim(*x_range)
    ax.set_ylim(*z_range)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("z (m)")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="upper left")
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=PROFILE_DPI, metadata={"Software": None})
    return buf.getvalue()


def bev_pixel(spec: BevGridSpec, x: float, y: float, scale: int) -> Tuple[float, float]:
    col = (spec.cols - (y - spec.y_min) / spec.resolution) * scale
    row = (spec.rows - (x - spec.x_min) / spec.resolution) * scale
    return col, row


def render_bev_overlay(
    hm: Heightmap,
    pred: Sequence[Lane3D],
    gt: Sequence[Lane3D],
    value_range: Tuple[float, float],
    scale: int = 3,
    gt_color: str = "#ffffff",
    pred_color: str = "#ff00ff",
) -> bytes:
    """Decoded and GT lanes as polylines over the heightmap image."""
    image = Image.fromarray(heightmap_rgb(hm, value_range, scale))
    draw = ImageDraw.Draw(image)
    for lanes, color in ((gt, gt_color), (pred, pred_color)):
        rgb = ImageColor.getrgb(color)
        for lane in lanes:
            pts = [bev_pixel(hm.spec, p[0], p[1], scale) for p in lane.points]
            if len(pts) >= 2:
                draw.line(pts, fill=rgb, width=max(1, scale // 2))
    return _png(image)


def run_render_job(job: RenderJob) -> List[str]:
    """
    Render every requested output of a RenderJob.

    The predicted heightmap and lanes come from inputs["checkpoint"] with
    inputs["config"] when given, else from inputs["pred_lanes"] (lanes only).

    Returns:
        list: Paths written
    """
    cfg = load_train_config(Path(job.inputs["config"])) if "config" in job.inputs else None
    grid = cfg.model.grid if cfg is not None else BevGridSpec()
    sample = load_scene(Path(job.inputs["scene"]), grid)
    predicted: Optional[Heightmap] = None
    pred_lanes: List[Lane3D] = []
    if "checkpoint" in job.inputs and cfg is not None:
        model = build_model(cfg.model)
        load_into(model, load_checkpoint(Path(job.inputs["checkpoint"])))
        (pred_lanes, predicted), = predict(model, [sample], job.use_gt_heightmap, cfg.conf_thresh, cfg.embed_margin)
    elif "pred_lanes" in job.inputs:
        pred_lanes = read_lanes(Path(job.inputs["pred_lanes"]))

    written = []
    renders = {
        "heightmap": lambda: render_heightmap_panel(
            [m for m in (predicted, sample.heightmap) if m is not None], job.value_range, job.scale
        ),
        "profile": lambda: render_lanes_yz(
            pred_lanes, sample.lanes, z_range=job.z_range, gt_color=job.gt_color, pred_color=job.pred_color
        ),
        "overlay": lambda: render_bev_overlay(
            predicted if predicted is not None else sample.heightmap, pred_lanes, sample.lanes, job.value_range, job.scale
        ),
    }
    for key, path in job.outputs.items():
        if key not in renders:
            raise ValueError(f"unknown render output {key!r}")
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(renders[key]())
        written.append(path)
        logger.info("rendered %s to %s", key, path)
    return written
