"""PFM and PNG raster I/O.

PFM files are written little-endian (negative scale) with rows stored
bottom-to-top.  ``Pf`` holds one channel, ``PF`` three.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError

_PFM_HEADER = re.compile(rb"\A(P[Ff])\s+(\d+)\s+(\d+)\s+(\S+)\s")


def encode_pfm(data: np.ndarray) -> bytes:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        magic = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        magic = b"PF"
    else:
        raise InputError(f"PFM stores 1 or 3 channels, got shape {data.shape}")
    h, w = data.shape[:2]
    header = magic + b"\n%d %d\n-1.0\n" % (w, h)
    return header + np.ascontiguousarray(data[::-1]).astype("<f4").tobytes()


def decode_pfm(buf: bytes) -> np.ndarray:
    m = _PFM_HEADER.match(buf)
    if not m:
        raise InputError("not a PFM file (bad header)")
    magic, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), m.group(4)
    try:
        scale = float(scale)
    except ValueError:
        raise InputError(f"bad PFM scale field {scale!r}") from None
    if scale == 0:
        raise InputError("PFM scale field must be non-zero")
    ch = 3 if magic == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * ch
    body = buf[m.end() :]
    if len(body) < 4 * n:
        raise InputError(f"truncated PFM body: {len(body)} bytes for {w}x{h}x{ch}")
    data = np.frombuffer(body[: 4 * n], dtype=dtype).astype(np.float64)
    data = data.reshape((h, w, ch) if ch == 3 else (h, w))
    return data[::-1].copy()


def write_pfm(path, data: np.ndarray):
    Path(path).write_bytes(encode_pfm(data))


def read_pfm(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    return decode_pfm(buf)


def read_png(path) -> np.ndarray:
    """8-bit image as float RGB in [0, 1], shape ``(H, W, 3)``."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from None
    return arr / 255.0


def write_png(path, rgb: np.ndarray):
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[..., None], 3, axis=-1)
    arr = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")
