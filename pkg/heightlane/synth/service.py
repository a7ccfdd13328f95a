"""
Synth Service Module

Procedural road scenes with exactly consistent ground truth:
- Analytic height profiles and their heightmaps
- Lane polylines sampled at BEV row centers
- BEV keypoint targets and the stride-16 2D mask
- Flat-shaded rendering of road and markings through the calibration
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image, ImageDraw

from heightlane.bev.schemas import BevGridSpec, Heightmap
from heightlane.bev.service import slope_height
from heightlane.exceptions import SpecInvalid
from heightlane.geometry.schemas import CameraCalibration
from heightlane.geometry.service import make_calibration, project_points
from heightlane.losses.schemas import BevTargets
from heightlane.metrics.schemas import Lane3D
from heightlane.metrics.service import resample_lane
from heightlane.synth.schemas import (
    MAX_PROFILE_SLOPE_DEG,
    DataConfig,
    HeightProfile,
    LaneCurve,
    Sample,
    SceneSpec,
)

logger = logging.getLogger(__name__)

MASK_STRIDE = 16
SUPERSAMPLE = 2
NEAR_X = 2.0
ROAD_STRIP = 1.0
MARK_STEP = 0.25
CURVE_C1 = 0.02

SKY = (135, 170, 210)
SOLID_MARKING = (230, 200, 60)
DASHED_MARKING = (240, 240, 240)


def profile_height(profile: HeightProfile, x):
    """Ground height (m) at longitudinal distance x."""
    x = np.asarray(x, dtype=np.float64)
    if profile.kind == "flat":
        return np.zeros_like(x)
    if profile.kind == "constant_slope":
        return slope_height(x, profile.theta)
    if profile.kind == "transition":
        before = slope_height(np.minimum(x, profile.x0), profile.theta)
        after = slope_height(np.maximum(x - profile.x0, 0.0), profile.theta2)
        return before + after
    return profile.amplitude * np.sin(2.0 * np.pi * x / profile.wavelength)


def profile_heightmap(profile: HeightProfile, spec: BevGridSpec) -> Heightmap:
    rows = profile_height(profile, spec.x_centers())
    return Heightmap(spec=spec, values=np.repeat(rows[:, None], spec.cols, axis=1))


def lane_y(lane: LaneCurve, x):
    x = np.asarray(x, dtype=np.float64)
    return lane.c0 + lane.c1 * x + lane.c2 * x * x


def is_painted(lane: LaneCurve, x, dash_length: float, gap_length: float):
    x = np.asarray(x, dtype=np.float64)
    painted = x >= NEAR_X
    if lane.dashed:
        painted &= np.mod(x, dash_length + gap_length) < dash_length
    return painted


def scenario_label(spec: SceneSpec) -> str:
    label = spec.profile.kind
    if any(abs(l.c2) > 0 or abs(l.c1) > CURVE_C1 for l in spec.lanes):
        label += "+curve"
    return label


def _in_lateral_range(spec: BevGridSpec, y: np.ndarray) -> np.ndarray:
    return (y >= spec.y_min) & (y < spec.y_max)


def check_scene(spec: SceneSpec) -> None:
    """
    Raises:
        SpecInvalid: If a slope exceeds 10°, a lane leaves the grid or two lanes
            come closer than two cells
    """
    p = spec.profile
    slopes = [p.theta] + ([p.theta2] if p.kind == "transition" else [])
    if any(abs(t) > MAX_PROFILE_SLOPE_DEG for t in slopes):
        raise SpecInvalid(f"profile slope exceeds {MAX_PROFILE_SLOPE_DEG}°")
    if p.kind == "sinusoidal":
        if p.wavelength <= 0 or p.amplitude < 0:
            raise SpecInvalid("sinusoidal profile needs amplitude >= 0 and wavelength > 0")
        if math.degrees(math.atan(2 * math.pi * p.amplitude / p.wavelength)) > MAX_PROFILE_SLOPE_DEG:
            raise SpecInvalid(f"sinusoidal profile is steeper than {MAX_PROFILE_SLOPE_DEG}°")
    if not spec.lanes:
        raise SpecInvalid("scene has no lanes")
    if spec.image_height % MASK_STRIDE or spec.image_width % MASK_STRIDE:
        raise SpecInvalid(f"image size must be divisible by {MASK_STRIDE}")
    if spec.marking_width <= 0 or spec.dash_length <= 0 or spec.gap_length < 0:
        raise SpecInvalid("marking width and dash length must be positive")
    xs = spec.grid.x_centers()
    ys = np.stack([lane_y(l, xs) for l in spec.lanes])
    inside = _in_lateral_range(spec.grid, ys)
    if (inside.sum(axis=1) < 2).any():
        raise SpecInvalid("every lane needs at least two rows inside the grid")
    for a in range(len(spec.lanes)):
        for b in range(a + 1, len(spec.lanes)):
            both = inside[a] & inside[b]
            if both.any() and np.abs(ys[a, both] - ys[b, both]).min() < 2 * spec.grid.resolution:
                raise SpecInvalid(f"lanes {a} and {b} come closer than two cells")


def gt_lanes(spec: SceneSpec) -> List[Lane3D]:
    """GT polylines: one keypoint per grid row inside the lateral range, z on the profile."""
    xs = spec.grid.x_centers()
    zs = profile_height(spec.profile, xs)
    lanes = []
    for k, lane in enumerate(spec.lanes):
        ys = lane_y(lane, xs)
        keep = _in_lateral_range(spec.grid, ys)
        pts = np.stack([xs[keep], ys[keep], zs[keep]], axis=1)
        lanes.append(Lane3D(points=pts.tolist(), instance_id=k + 1))
    return lanes


def mask_at_stride(marking: np.ndarray, stride: int = MASK_STRIDE) -> np.ndarray:
    h, w = marking.shape
    blocks = marking.reshape(h // stride, stride, w // stride, stride)
    return blocks.any(axis=(1, 3)).astype(np.float64)


def rasterize_targets(lanes: Sequence[Lane3D], heightmap: Heightmap, mask2d: np.ndarray) -> BevTargets:
    """
    Keypoint targets: each lane is resampled at the row centers; the cell holding
    y gets confidence 1, offset = fractional lateral position, instance = lane order + 1.
    A cell already claimed by an earlier lane keeps its first owner.
    """
    spec = heightmap.spec
    confidence = np.zeros(spec.shape)
    offset = np.zeros(spec.shape)
    instance = np.zeros(spec.shape, dtype=np.int64)
    xs = spec.x_centers()
    for k, lane in enumerate(lanes, start=1):
        ys, _, valid = resample_lane(lane, xs)
        valid &= _in_lateral_range(spec, ys)
        rows = np.nonzero(valid)[0]
        pos = (ys[rows] - spec.y_min) / spec.resolution
        cols = np.floor(pos).astype(np.int64)
        free = instance[rows, cols] == 0
        rows, cols, pos = rows[free], cols[free], pos[free]
        confidence[rows, cols] = 1.0
        offset[rows, cols] = pos - cols
        instance[rows, cols] = k
    return BevTargets(confidence=confidence, offset=offset, instance=instance, heightmap=heightmap, mask2d=mask2d)


def _to_canvas(u: np.ndarray, v: np.ndarray) -> List[Tuple[float, float]]:
    s = SUPERSAMPLE
    return list(zip((u * s + (s - 1) / 2.0).tolist(), (v * s + (s - 1) / 2.0).tolist()))


def render_scene(spec: SceneSpec, rng: Optional[np.random.Generator] = None):
    """
    Flat-shaded far-to-near road strips and lane markings, rendered at 2x and
    box-filtered down for anti-aliasing.

    Returns:
        tuple: (uint8 image (H, W, 3), bool marking mask (H, W))
    """
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    s = SUPERSAMPLE
    size = (spec.image_width * s, spec.image_height * s)
    canvas = Image.new("RGB", size, SKY)
    marks = Image.new("L", size, 0)
    draw, mark_draw = ImageDraw.Draw(canvas), ImageDraw.Draw(marks)
    calib, grid = spec.calibration, spec.grid
    base = float(rng.uniform(80.0, 110.0))

    edges = np.arange(grid.x_max, NEAR_X - 1e-9, -ROAD_STRIP)
    for xa, xb in zip(edges[:-1], edges[1:]):
        za, zb = profile_height(spec.profile, [xa, xb])
        corners = np.array(
            [[xa, grid.y_min, za], [xa, grid.y_max, za], [xb, grid.y_max, zb], [xb, grid.y_min, zb]]
        )
        u, v, _, valid = project_points(corners, calib)
        if not valid.all():
            continue
        grade = (za - zb) / (xa - xb)
        shade = int(np.clip(base + 60.0 * grade, 0, 255))
        draw.polygon(_to_canvas(u, v), fill=(shade, shade, min(255, shade + 6)))

    half = spec.marking_width / 2.0
    radius = s
    for lane in spec.lanes:
        color = DASHED_MARKING if lane.dashed else SOLID_MARKING
        xs = np.arange(grid.x_max, NEAR_X - 1e-9, -MARK_STEP)
        ys = lane_y(lane, xs)
        zs = profile_height(spec.profile, xs)
        painted = is_painted(lane, xs, spec.dash_length, spec.gap_length) & _in_lateral_range(grid, ys)
        center = np.stack([xs, ys, zs], axis=1)
        uc, vc, _, vc_valid = project_points(center, calib)
        left_u, left_v, _, lv = project_points(center + [0.0, half, 0.0], calib)
        right_u, right_v, _, rv = project_points(center - [0.0, half, 0.0], calib)
        pts = _to_canvas(uc, vc)
        for k in range(len(xs) - 1):
            seg = slice(k, k + 2)
            if not (painted[seg].all() and vc_valid[seg].all() and lv[seg].all() and rv[seg].all()):
                continue
            quad = _to_canvas(
                np.array([left_u[k], left_u[k + 1], right_u[k + 1], right_u[k]]),
                np.array([left_v[k], left_v[k + 1], right_v[k + 1], right_v[k]]),
            )
            for d, fill in ((draw, color), (mark_draw, 255)):
                d.polygon(quad, fill=fill)
                d.line([pts[k], pts[k + 1]], fill=fill, width=2 * s)
        for k in np.nonzero(painted & vc_valid)[0]:
            cu, cv = pts[k]
            box = [cu - radius, cv - radius, cu + radius, cv + radius]
            draw.ellipse(box, fill=color)
            mark_draw.ellipse(box, fill=255)

    image = canvas.resize((spec.image_width, spec.image_height), Image.BOX)
    marking = np.asarray(marks, dtype=np.uint8) > 0
    marking = marking.reshape(spec.image_height, s, spec.image_width, s).any(axis=(1, 3))
    return np.asarray(image, dtype=np.uint8), marking


def image_tensor(pixels: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(pixels.transpose(2, 0, 1))).to(torch.float32) / 255.0


def generate_scene(spec: SceneSpec, scene_id: str = "") -> Sample:
    """
    Render a scene and build all of its ground truth.

    Raises:
        SpecInvalid: If the scene fails check_scene
    """
    check_scene(spec)
    rng = np.random.default_rng(spec.seed)
    pixels, marking = render_scene(spec, rng)
    heightmap = profile_heightmap(spec.profile, spec.grid)
    lanes = gt_lanes(spec)
    targets = rasterize_targets(lanes, heightmap, mask_at_stride(marking))
    painted = [
        is_painted(curve, lane.as_array()[:, 0], spec.dash_length, spec.gap_length)
        for curve, lane in zip(spec.lanes, lanes)
    ]
    logger.debug("scene %s: %d lanes, %s profile", scene_id, len(lanes), spec.profile.kind)
    return Sample(
        scene_id=scene_id,
        image=image_tensor(pixels),
        calibration=spec.calibration,
        targets=targets,
        lanes=lanes,
        scenario=scenario_label(spec),
        marking_mask=marking,
        painted=painted,
    )


def _random_profile(rng: np.random.Generator, cfg: DataConfig) -> HeightProfile:
    r = rng.random()
    if r < cfg.transition_fraction:
        theta = float(rng.uniform(-2.0, 2.0))
        step = float(rng.uniform(3.0, 6.0)) * (1.0 if rng.random() < 0.5 else -1.0)
        return HeightProfile(
            kind="transition",
            theta=theta,
            theta2=float(np.clip(theta + step, -8.0, 8.0)),
            x0=float(rng.uniform(20.0, 60.0)),
        )
    kinds = ["constant_slope", "sinusoidal"] if cfg.sloped_only else ["flat", "constant_slope", "sinusoidal"]
    kind = kinds[min(int((r - cfg.transition_fraction) / (1.0 - cfg.transition_fraction) * len(kinds)), len(kinds) - 1)]
    if kind == "flat":
        return HeightProfile(kind="flat")
    if kind == "constant_slope":
        magnitude = float(rng.uniform(2.0, 6.0))
        return HeightProfile(kind="constant_slope", theta=magnitude if rng.random() < 0.5 else -magnitude)
    wavelength = float(rng.uniform(40.0, 100.0))
    amplitude = min(float(rng.uniform(0.3, 1.5)), wavelength * math.tan(math.radians(8.0)) / (2 * math.pi))
    return HeightProfile(kind="sinusoidal", amplitude=amplitude, wavelength=wavelength)


def random_scene_spec(index: int, cfg: DataConfig, grid: Optional[BevGridSpec] = None) -> SceneSpec:
    """Scene `index` of the dataset seeded by cfg.seed; independent of every other index."""
    rng = np.random.default_rng([cfg.seed, index])
    profile = _random_profile(rng, cfg)
    n_lanes = int(rng.integers(2, 5))
    shift = float(rng.uniform(-1.0, 1.0))
    if rng.random() < 0.5:
        c1, c2 = float(rng.uniform(-0.02, 0.02)), float(rng.uniform(-3e-4, 3e-4))
    else:
        c1, c2 = 0.0, 0.0
    lanes = [
        LaneCurve(c0=(k - (n_lanes - 1) / 2.0) * 3.5 + shift, c1=c1, c2=c2, dashed=0 < k < n_lanes - 1)
        for k in range(n_lanes)
    ]
    calib = make_calibration(
        fx=cfg.focal,
        fy=cfg.focal,
        cx=cfg.image_width / 2.0,
        cy=cfg.horizon_row,
        height=cfg.camera_height,
        pitch_deg=float(rng.uniform(-0.5, 0.5)),
    )
    return SceneSpec(
        profile=profile,
        lanes=lanes,
        calibration=calib,
        image_height=cfg.image_height,
        image_width=cfg.image_width,
        grid=grid or BevGridSpec(),
        seed=int(rng.integers(0, 2**31 - 1)),
    )
