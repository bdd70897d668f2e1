"""PNG/PGM export and import for tiles, observations and heatmaps."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_image(path: str | Path, img: np.ndarray) -> None:
    """Write a [0, 1] float image; ``.pgm`` forces grayscale, anything else goes through Pillow by suffix."""
    path = Path(path)
    arr = to_uint8(img)
    if path.suffix.lower() == ".pgm" and arr.ndim == 3:
        arr = to_uint8(np.asarray(img, dtype=np.float64).mean(axis=-1))
    Image.fromarray(arr).save(path)


def load_image(path: str | Path) -> np.ndarray:
    """Read an observation as float32 ``(H, W, 3)`` in [0, 1]; ``.npy`` files are loaded verbatim."""
    path = Path(path)
    if path.suffix.lower() == ".npy":
        return np.load(path).astype(np.float32)
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def heatmap_colors(sims: np.ndarray) -> np.ndarray:
    """Blue-low / red-high colormap: cosine ``-1`` is pure blue, ``+1`` pure red, linear in between."""
    x = (np.clip(np.asarray(sims, dtype=np.float64), -1.0, 1.0) + 1.0) / 2.0
    return np.stack([x, np.zeros_like(x), 1.0 - x], axis=-1)


def save_heatmap(path: str | Path, sims: np.ndarray, scale: int = 16) -> None:
    rgb = heatmap_colors(sims)
    rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    save_image(path, rgb)
