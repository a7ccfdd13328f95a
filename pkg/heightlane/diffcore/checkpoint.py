"""
HLCK checkpoint codec (little-endian):
magic `HLCK`, u32 version, u32 tensor count, then per tensor sorted by name:
u32 name length, UTF-8 name, u32 ndims, u32 dims..., f32 data.
"""

import struct
from pathlib import Path
from typing import Dict, Mapping

import numpy as np
import torch
from torch import nn

from heightlane.exceptions import CheckpointMismatch, ParseError

MAGIC = b"HLCK"
VERSION = 1


def encode_checkpoint(tensors: Mapping[str, torch.Tensor]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        data = tensors[name].detach().cpu().to(torch.float32).numpy()
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<I{data.ndim}I", data.ndim, *data.shape))
        chunks.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob: bytes) -> Dict[str, torch.Tensor]:
    if blob[:4] != MAGIC:
        raise ParseError(f"bad checkpoint magic {blob[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise ParseError(f"unsupported checkpoint version {version}")
        offset = 12
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndims,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            dims = struct.unpack_from(f"<{ndims}I", blob, offset)
            offset += 4 * ndims
            size = int(np.prod(dims)) if ndims else 1
            data = np.frombuffer(blob, dtype="<f4", count=size, offset=offset).reshape(dims)
            offset += 4 * size
            tensors[name] = torch.from_numpy(data.copy())
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ParseError(f"corrupt checkpoint: {exc}") from exc
    if offset != len(blob):
        raise ParseError("trailing bytes after checkpoint payload")
    return tensors


def save_checkpoint(model: nn.Module, path: Path) -> None:
    Path(path).write_bytes(encode_checkpoint(model.state_dict()))


def load_checkpoint(path: Path) -> Dict[str, torch.Tensor]:
    return decode_checkpoint(Path(path).read_bytes())


def load_into(model: nn.Module, tensors: Mapping[str, torch.Tensor]) -> None:
    """
    Copy checkpoint tensors into a model.

    Raises:
        CheckpointMismatch: If names or shapes differ from the model's
    """
    expected = model.state_dict()
    missing = sorted(set(expected) - set(tensors))
    unexpected = sorted(set(tensors) - set(expected))
    if missing or unexpected:
        raise CheckpointMismatch(f"checkpoint names differ: missing {missing[:5]}, unexpected {unexpected[:5]}")
    for name, value in expected.items():
        if tuple(tensors[name].shape) != tuple(value.shape):
            raise CheckpointMismatch(
                f"{name}: checkpoint shape {tuple(tensors[name].shape)} != model shape {tuple(value.shape)}"
            )
    model.load_state_dict({k: v.to(expected[k].dtype) for k, v in tensors.items()})
