"""Region repainting: replace masked pixels with something else.

The reference repainter fills the region with seeded low-frequency color
noise around the surrounding mean color and feathers the boundary — enough
to change appearance while keeping the output plausible and bit-repeatable.
A diffusion inpainter plugs in by replacing :func:`repaint_pixels`; the mask
handling, feathering, and PNG emission stay the same.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from scipy import ndimage

from vsmatch import read_mask

from .errors import EditError
from .imageio import load_rgb, resize_plane, save_rgb

# Coarse noise grid and color swing of the reference repaint.
NOISE_CELLS = 12
NOISE_CONTRAST = 0.8
FEATHER_PX = 2


def _edit_rng(prompt: str, seed: int) -> np.random.Generator:
    material = f"inpaint:v1:seed{seed}:{prompt}".encode()
    digest = hashlib.sha256(material).digest()
    return np.random.default_rng([int(w) for w in np.frombuffer(digest, dtype=np.uint64)])


def repaint_pixels(
    image: np.ndarray, region: np.ndarray, prompt: str, seed: int
) -> np.ndarray:
    """New color content for the region: seeded blotches around the ring mean."""
    h, w = image.shape[:2]
    ring = ndimage.binary_dilation(region, iterations=max(2, FEATHER_PX * 2)) & ~region
    base = image[ring].mean(axis=0) if ring.any() else image.reshape(-1, 3).mean(axis=0)
    rng = _edit_rng(prompt, seed)
    coarse = rng.random((NOISE_CELLS, NOISE_CELLS, 3), dtype=np.float64).astype(np.float32)
    noise = np.stack([resize_plane(coarse[:, :, c], h, w) for c in range(3)], axis=2)
    return np.clip(base[None, None, :] + (noise - 0.5) * NOISE_CONTRAST, 0.0, 1.0)


def inpaint(
    image: str | Path,
    mask: str | Path,
    dest: str | Path,
    prompt: str = "",
    seed: int = 0,
) -> Path:
    """Repaint the masked region of ``image`` and write a PNG to ``dest``.

    ``mask`` is an MTGM grid mask; its footprint is scaled to the image.
    Rejects empty masks: repainting nothing is always a caller mistake.
    """
    pixels = load_rgb(image)
    grid_mask = read_mask(mask)
    if grid_mask.area == 0:
        raise EditError(f"inpaint mask {mask} has zero area")
    h, w = pixels.shape[:2]
    gh, gw = grid_mask.bits.shape
    region = grid_mask.bits[
        np.minimum((np.arange(h) * gh) // h, gh - 1)[:, None],
        np.minimum((np.arange(w) * gw) // w, gw - 1)[None, :],
    ].astype(bool)
    repaint = repaint_pixels(pixels, region, prompt, int(seed))
    alpha = ndimage.uniform_filter(
        region.astype(np.float32), size=2 * FEATHER_PX + 1, mode="nearest"
    )
    out = alpha[:, :, None] * repaint + (1.0 - alpha[:, :, None]) * pixels
    return save_rgb(out, dest)
