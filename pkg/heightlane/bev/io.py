"""
BEVH heightmap codec (little-endian):
magic `BEVH`, u32 version, u32 rows, u32 cols, f32 resolution, f32 x_min, f32 y_min,
then rows*cols f32 values row-major. NaN encodes unknown cells.
"""

import struct
from pathlib import Path

import numpy as np

from heightlane.bev.schemas import BevGridSpec, Heightmap
from heightlane.exceptions import ParseError

MAGIC = b"BEVH"
VERSION = 1
_HEADER = struct.Struct("<4sIIIfff")


def encode_heightmap(hm: Heightmap) -> bytes:
    spec = hm.spec
    header = _HEADER.pack(MAGIC, VERSION, spec.rows, spec.cols, spec.resolution, spec.x_min, spec.y_min)
    return header + hm.values.astype("<f4").tobytes(order="C")


def decode_heightmap(blob: bytes) -> Heightmap:
    if len(blob) < _HEADER.size:
        raise ParseError("heightmap file is truncated")
    magic, version, rows, cols, res, x_min, y_min = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ParseError(f"bad heightmap magic {magic!r}")
    if version != VERSION:
        raise ParseError(f"unsupported heightmap version {version}")
    expected = _HEADER.size + rows * cols * 4
    if len(blob) != expected:
        raise ParseError(f"heightmap payload is {len(blob)} bytes, expected {expected}")
    values = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
    # header floats are f32; widen with float() before building the grid
    spec = BevGridSpec(rows=rows, cols=cols, resolution=float(res), x_min=float(x_min), y_min=float(y_min))
    return Heightmap(spec=spec, values=values.astype(np.float64))


def write_heightmap(hm: Heightmap, path: Path) -> None:
    Path(path).write_bytes(encode_heightmap(hm))


def read_heightmap(path: Path) -> Heightmap:
    return decode_heightmap(Path(path).read_bytes())
