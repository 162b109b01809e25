"""Binary PPM (P6) image grids."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np


def to_uint8(images01) -> np.ndarray:
    """Map values in [0, 1] to bytes, clamping outside the range."""
    return np.clip(np.rint(np.asarray(images01, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def make_grid(images: np.ndarray, ncols: int | None = None) -> np.ndarray:
    """Tile ``(M, C, H, W)`` bytes into one ``(rows*H, cols*W, 3)`` RGB array."""
    m, c, h, w = images.shape
    if c not in (1, 3):
        raise ValueError(f"PPM grids need 1 or 3 channels, got {c}")
    ncols = ncols or math.ceil(math.sqrt(m))
    nrows = math.ceil(m / ncols)
    rgb = np.repeat(images, 3, axis=1) if c == 1 else images
    grid = np.zeros((nrows * h, ncols * w, 3), dtype=np.uint8)
    for k in range(m):
        r, col = divmod(k, ncols)
        grid[r * h : (r + 1) * h, col * w : (col + 1) * w] = rgb[k].transpose(1, 2, 0)
    return grid


def write_ppm(path, rgb: np.ndarray) -> Path:
    path = Path(path)
    h, w, _ = rgb.shape
    with path.open("wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())
    return path


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit P6 file")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8, count=h * w * 3).reshape(h, w, 3)
