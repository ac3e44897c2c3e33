"""Single-file parameter checkpoints.

Layout::

    magic  b"SPINE3D\\0"            8 bytes
    version                        uint32 little-endian
    header length                  uint64 little-endian
    header                         UTF-8 JSON: config, manifest, metadata
    data                           raw little-endian float64, one block per parameter

Each manifest entry is ``{"name", "dims", "offset"}`` with ``offset`` in bytes
from the start of the data section.  Generator parameters are stored under
``generator/`` and discriminator parameters under ``discriminator/``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .. import imageio
from ..tensor_core import Tensor, parameter
from .config import EUFormerConfig

MAGIC = b"SPINE3D\0"
VERSION = 1
_PREFIX = ("generator/", "discriminator/")
_LE_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint file."""


@dataclass
class Checkpoint:
    config: EUFormerConfig
    generator: dict[str, Tensor]
    discriminator: dict[str, Tensor] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def to_bytes(ckpt: Checkpoint) -> bytes:
    manifest = []
    blocks = []
    offset = 0
    for prefix, group in zip(_PREFIX, (ckpt.generator, ckpt.discriminator)):
        for name in sorted(group):
            arr = np.ascontiguousarray(np.asarray(group[name].data, dtype=_LE_F64))
            manifest.append({"name": prefix + name, "dims": list(arr.shape), "offset": offset})
            blocks.append(arr.tobytes())
            offset += arr.nbytes
    header = json.dumps({"version": VERSION, "config": ckpt.config.to_dict(), "manifest": manifest,
                         "metadata": ckpt.metadata}, allow_nan=False).encode("utf-8")
    return MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(blocks)


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[:8] != MAGIC:
        raise CheckpointError("not a spine3d checkpoint (bad magic)")
    if len(buf) < 20:
        raise CheckpointError("truncated checkpoint header")
    version, hlen = struct.unpack("<IQ", buf[8:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(buf[20 : 20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    data = memoryview(buf)[20 + hlen :]
    groups = ({}, {})
    for entry in header["manifest"]:
        dims = tuple(int(d) for d in entry["dims"])
        start = int(entry["offset"])
        stop = start + int(np.prod(dims, dtype=np.int64)) * _LE_F64.itemsize
        if stop > len(data):
            raise CheckpointError(f"parameter {entry['name']} runs past the end of the file")
        arr = np.frombuffer(data[start:stop], dtype=_LE_F64).reshape(dims).astype(np.float64)
        for prefix, group in zip(_PREFIX, groups):
            if entry["name"].startswith(prefix):
                name = entry["name"][len(prefix):]
                group[name] = parameter(arr, name=name)
                break
        else:
            raise CheckpointError(f"unknown parameter group in {entry['name']!r}")
    return Checkpoint(EUFormerConfig.from_dict(header["config"]), groups[0], groups[1], header.get("metadata", {}))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    imageio.atomic_write_bytes(path, to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
