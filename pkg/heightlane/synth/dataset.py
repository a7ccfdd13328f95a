"""
Dataset assembly: deterministic train/val split, bounded in-order sample
production, and the on-disk scene layout shared with prepared real data.

Layout:
    <root>/manifest.json
    <root>/scenes/<id>/{image.png, calib.json, lanes.json, height.bevh, mask2d.png}
"""

import hashlib
import json
import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from PIL import Image

from heightlane.bev.io import read_heightmap, write_heightmap
from heightlane.bev.schemas import BevGridSpec
from heightlane.exceptions import GridMismatch, ParseError
from heightlane.geometry.service import load_calibration, save_calibration
from heightlane.metrics.service import read_lanes, write_lanes
from heightlane.synth.schemas import DataConfig, Sample, SceneSpec
from heightlane.synth.service import generate_scene, image_tensor, random_scene_spec, rasterize_targets

logger = logging.getLogger(__name__)

SPLITS = ("train", "val")
T = TypeVar("T")
R = TypeVar("R")


def scene_id(index: int) -> str:
    return f"{index:06d}"


def _index_hash(index: int) -> int:
    return int.from_bytes(hashlib.sha256(str(index).encode("utf-8")).digest()[:8], "big")


def split_indices(count: int, val_fraction: float = 0.2) -> Tuple[List[int], List[int]]:
    """
    Ranks indices by the hash of their index; the lowest round(count·val_fraction)
    go to val. Both lists come back in index order.
    """
    n_val = int(round(count * val_fraction))
    ranked = sorted(range(count), key=lambda i: (_index_hash(i), i))
    val = sorted(ranked[:n_val])
    train = sorted(ranked[n_val:])
    return train, val


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 4, prefetch: int = 8) -> Iterator[R]:
    """
    Apply fn on a worker pool with at most `prefetch` results in flight, yielding
    in input order.
    """
    if workers <= 1:
        for item in items:
            yield fn(item)
        return
    pending = deque()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for item in items:
            pending.append(pool.submit(fn, item))
            if len(pending) >= max(1, prefetch):
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()


def dataset(
    specs: Sequence[SceneSpec],
    split: str,
    val_fraction: float = 0.2,
    workers: int = 4,
    prefetch: int = 8,
) -> Iterator[Sample]:
    """Samples of one split, generated concurrently, in spec index order."""
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    train, val = split_indices(len(specs), val_fraction)
    chosen = train if split == "train" else val
    return ordered_map(lambda i: generate_scene(specs[i], scene_id(i)), chosen, workers, prefetch)


def scene_specs(cfg: DataConfig, grid: Optional[BevGridSpec] = None) -> List[SceneSpec]:
    return [random_scene_spec(i, cfg, grid) for i in range(cfg.count)]


def write_scene(sample: Sample, scene_dir: Path) -> None:
    scene_dir.mkdir(parents=True, exist_ok=True)
    pixels = (sample.image.numpy().transpose(1, 2, 0) * 255.0).round().clip(0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(scene_dir / "image.png")
    save_calibration(sample.calibration, scene_dir / "calib.json")
    write_lanes(sample.lanes, scene_dir / "lanes.json")
    write_heightmap(sample.heightmap, scene_dir / "height.bevh")
    mask = (sample.mask2d > 0).astype(np.uint8) * 255
    Image.fromarray(mask).save(scene_dir / "mask2d.png")


def write_dataset(cfg: DataConfig, out_dir: Path, grid: Optional[BevGridSpec] = None) -> dict:
    """
    Generate cfg.count scenes and write them with their manifest.

    Returns:
        dict: The manifest written to <out_dir>/manifest.json
    """
    out_dir = Path(out_dir)
    specs = scene_specs(cfg, grid)
    train, _ = split_indices(len(specs), cfg.val_fraction)
    train_set = set(train)
    entries = []
    samples = ordered_map(lambda i: generate_scene(specs[i], scene_id(i)), range(len(specs)), cfg.workers, cfg.prefetch)
    for index, sample in enumerate(samples):
        write_scene(sample, out_dir / "scenes" / sample.scene_id)
        entries.append(
            {"id": sample.scene_id, "split": "train" if index in train_set else "val", "scenario": sample.scenario}
        )
    manifest = {"seed": cfg.seed, "grid": (grid or BevGridSpec()).model_dump(), "scenes": entries}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    logger.info("wrote %d scenes (%d train) to %s", len(entries), len(train), out_dir)
    return manifest


def read_manifest(root: Path) -> dict:
    path = Path(root) / "manifest.json"
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        _ = [(e["id"], e["split"]) for e in data["scenes"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: invalid dataset manifest ({exc})") from exc
    return data


def load_scene(scene_dir: Path, grid: BevGridSpec, scenario: str = "unknown") -> Sample:
    """
    Read one scene directory; BEV targets are rasterized from lanes.json.

    Raises:
        GridMismatch: If the stored heightmap is on another grid
        ParseError, CalibrationError: On malformed files
    """
    scene_dir = Path(scene_dir)
    heightmap = read_heightmap(scene_dir / "height.bevh")
    if heightmap.spec != grid:
        raise GridMismatch(f"{scene_dir}: heightmap grid {heightmap.spec} differs from {grid}")
    with Image.open(scene_dir / "image.png") as img:
        pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    with Image.open(scene_dir / "mask2d.png") as img:
        mask2d = (np.asarray(img.convert("L")) > 127).astype(np.float64)
    lanes = read_lanes(scene_dir / "lanes.json")
    for k, lane in enumerate(lanes, start=1):
        lane.instance_id = k
    return Sample(
        scene_id=scene_dir.name,
        image=image_tensor(pixels),
        calibration=load_calibration(scene_dir / "calib.json"),
        targets=rasterize_targets(lanes, heightmap, mask2d),
        lanes=lanes,
        scenario=scenario,
    )


def load_dataset(root: Path, split: str, grid: BevGridSpec, workers: int = 4, prefetch: int = 8) -> Iterator[Sample]:
    root = Path(root)
    entries = [e for e in read_manifest(root)["scenes"] if e["split"] == split]
    return ordered_map(
        lambda e: load_scene(root / "scenes" / e["id"], grid, e.get("scenario", "unknown")), entries, workers, prefetch
    )


def build_samples(cfg: DataConfig, split: str, grid: Optional[BevGridSpec] = None) -> List[Sample]:
    """All samples of a split: read from cfg.root when set, otherwise generated."""
    grid = grid or BevGridSpec()
    if cfg.root:
        samples = list(load_dataset(Path(cfg.root), split, grid, cfg.workers, cfg.prefetch))
    else:
        samples = list(dataset(scene_specs(cfg, grid), split, cfg.val_fraction, cfg.workers, cfg.prefetch))
    logger.info("%s split: %d samples", split, len(samples))
    return samples
