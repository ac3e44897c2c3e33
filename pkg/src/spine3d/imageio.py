"""Netpbm image and JSON file helpers; every write is atomic (temp file + rename)."""

from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps_json(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _to_u8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(arr, dtype=float) * 255.0), 0, 255).astype(np.uint8)


def write_gray(path, arr: np.ndarray) -> None:
    """Write an (H, W) or (H, W, 1) map in [0, 1] as binary PGM (P5)."""
    a = np.asarray(arr)
    if a.ndim == 3:
        a = a[..., 0]
    buf = io.BytesIO()
    Image.fromarray(_to_u8(a), mode="L").save(buf, format="PPM")
    atomic_write_bytes(path, buf.getvalue())


def write_rgb(path, arr: np.ndarray) -> None:
    """Write an (H, W, 3) image in [0, 1] as binary PPM (P6)."""
    buf = io.BytesIO()
    Image.fromarray(_to_u8(arr), mode="RGB").save(buf, format="PPM")
    atomic_write_bytes(path, buf.getvalue())


def read_gray(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def resize(arr: np.ndarray, h: int, w: int, nearest: bool = False) -> np.ndarray:
    """Resize an image in [0, 1]; bilinear by default, nearest for masks."""
    a = np.asarray(arr, dtype=np.float32)
    squeeze = a.ndim == 3 and a.shape[2] == 1
    if squeeze:
        a = a[..., 0]
    if a.shape[:2] == (h, w):
        out = a.astype(np.float64)
    else:
        resample = Image.NEAREST if nearest else Image.BILINEAR
        if a.ndim == 2:
            out = np.asarray(Image.fromarray(a, mode="F").resize((w, h), resample), dtype=np.float64)
        else:
            out = np.stack([np.asarray(Image.fromarray(np.ascontiguousarray(a[..., k]), mode="F").resize((w, h), resample))
                            for k in range(a.shape[2])], axis=-1).astype(np.float64)
    return out[..., None] if squeeze else out
