"""Pixel I/O helpers: PNG in, PNG out, float planes in between.

Everything downstream works on float32 (height, width, 3) arrays in [0, 1];
these helpers own the conversion and the resampling so the rest of the
package never touches PIL directly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ImageError


def load_rgb(path: str | Path) -> np.ndarray:
    """Load an image file as float32 (h, w, 3) in [0, 1]."""
    p = Path(path)
    if not p.is_file():
        raise ImageError(f"image not found: {p}")
    try:
        with Image.open(p) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except OSError as exc:
        raise ImageError(f"cannot read image {p}: {exc}") from exc
    if arr.ndim != 3 or arr.shape[2] != 3 or min(arr.shape[:2]) < 8:
        raise ImageError(f"image {p} too small or malformed: shape {arr.shape}")
    return arr


def save_rgb(arr: np.ndarray, path: str | Path) -> Path:
    """Write a float32 (h, w, 3) array in [0, 1] as an 8-bit PNG."""
    p = Path(path)
    data = np.clip(np.asarray(arr, dtype=np.float32), 0.0, 1.0)
    Image.fromarray((data * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(p, format="PNG")
    return p


def resize_plane(plane: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resample of one float32 plane to (height, width)."""
    img = Image.fromarray(np.ascontiguousarray(plane, dtype=np.float32), mode="F")
    out = img.resize((width, height), resample=Image.Resampling.BILINEAR)
    return np.asarray(out, dtype=np.float32)


def resize_rgb(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resample of an (h, w, 3) float image to (height, width, 3)."""
    return np.stack(
        [resize_plane(arr[:, :, c], height, width) for c in range(arr.shape[2])], axis=2
    )


def luminance(arr: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of an (h, w, 3) float image."""
    return arr[:, :, 0] * 0.299 + arr[:, :, 1] * 0.587 + arr[:, :, 2] * 0.114
