"""PLY point files (ascii or binary little-endian) via plyfile."""

from pathlib import Path

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from heightlane.exceptions import ParseError


def read_ply_points(path: Path) -> np.ndarray:
    """
    Read the x, y, z vertex properties of a PLY file.

    Raises:
        ParseError: If the file is missing, malformed or lacks x/y/z
    """
    try:
        data = PlyData.read(str(path))
        vertex = data["vertex"]
        pts = np.stack([np.asarray(vertex[k], dtype=np.float64) for k in ("x", "y", "z")], axis=1)
    except (OSError, KeyError, ValueError, PlyParseError) as exc:
        raise ParseError(f"{path}: cannot read PLY points ({exc})") from exc
    if not np.all(np.isfinite(pts)):
        raise ParseError(f"{path}: non-finite coordinates")
    return pts


def write_ply_points(points: np.ndarray, path: Path, binary: bool = True) -> None:
    pts = np.asarray(points, dtype=np.float64)
    vertex = np.empty(len(pts), dtype=[("x", "<f8"), ("y", "<f8"), ("z", "<f8")])
    vertex["x"], vertex["y"], vertex["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    element = PlyElement.describe(vertex, "vertex")
    PlyData([element], text=not binary, byte_order="<").write(str(path))
