"""
Binary PGM (P5) / PPM (P6) images and atomic file writes

Header: magic, width, height, maxval (255) separated by single spaces or
newlines, then one newline and the raw 8-bit row-major payload.
"""

import os
import tempfile
from pathlib import Path
from typing import Union

import numpy as np

PathLike = Union[str, Path]


def write_bytes_atomic(path: PathLike, payload: bytes) -> Path:
    """Write to a temp file in the target directory, then rename over `path`"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def normalize_minmax(values: np.ndarray) -> np.ndarray:
    """Map min..max to 0..255 (uint8); a constant image becomes all zeros"""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def encode_pnm(pixels: np.ndarray) -> bytes:
    """[H, W] -> P5 bytes, [H, W, 3] -> P6 bytes; values must be uint8"""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise TypeError(f"PNM payload must be uint8, got {pixels.dtype}")
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"PNM expects [H, W] or [H, W, 3], got {pixels.shape}")
    h, w = pixels.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def write_pgm(path: PathLike, pixels: np.ndarray) -> Path:
    if np.asarray(pixels).ndim != 2:
        raise ValueError("PGM needs a single-channel [H, W] image")
    return write_bytes_atomic(path, encode_pnm(pixels))


def write_ppm(path: PathLike, pixels: np.ndarray) -> Path:
    if np.asarray(pixels).ndim != 3:
        raise ValueError("PPM needs an [H, W, 3] image")
    return write_bytes_atomic(path, encode_pnm(pixels))


def read_pnm(path: PathLike) -> np.ndarray:
    """Read a binary P5/P6 file with maxval <= 255 (comments allowed in the header)"""
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PNM header")
        fields.append(data[start:pos])
    pos += 1
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic not in (b"P5", b"P6") or maxval > 255:
        raise ValueError(f"{path}: only 8-bit binary P5/P6 images are supported")
    channels = 3 if magic == b"P6" else 1
    payload = np.frombuffer(data, dtype=np.uint8, count=w * h * channels, offset=pos)
    return payload.reshape((h, w, 3) if channels == 3 else (h, w)).copy()
