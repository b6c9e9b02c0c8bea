"""Subject and point segmentation onto interchange grid masks.

The reference implementations are classical: a border-prior saliency cut for
the whole subject, and color-tolerance flood regions for a clicked point
(three candidates, tight to loose, the way point-prompted segmenters return
a small mask pyramid). Real segmentation models plug in upstream; whatever
produces the pixel mask, the grid projection and the MTGM emission here are
the contract.

Pixel masks are projected onto the output grid by coverage: a cell switches
on when at least half of it is masked, with a fallback to the best-covered
cell so an emitted mask is never empty.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from vsmatch import Mask, write_mask

from .errors import ImageError
from .imageio import load_rgb
from .spec import DEFAULT_GRID

# Tight / medium / loose color tolerances for point prompts, in RGB distance.
POINT_TOLERANCES = (0.06, 0.12, 0.24)


def _grid_mask(pixel_mask: np.ndarray, grid: int) -> Mask:
    """Coverage-projected grid mask; guaranteed at least one set cell."""
    h, w = pixel_mask.shape
    rows = np.minimum((np.arange(h) * grid) // h, grid - 1)
    cols = np.minimum((np.arange(w) * grid) // w, grid - 1)
    flat = rows[:, None] * grid + cols[None, :]
    covered = np.bincount(flat.ravel(), weights=pixel_mask.ravel(), minlength=grid * grid)
    total = np.bincount(flat.ravel(), minlength=grid * grid)
    coverage = covered / np.maximum(total, 1)
    bits = (coverage >= 0.5).astype(np.uint8)
    if not bits.any():
        bits[np.argmax(coverage)] = 1
    return Mask(bits.reshape(grid, grid))


def _largest_component(binary: np.ndarray) -> np.ndarray:
    labels, count = ndimage.label(binary)
    if count == 0:
        return binary
    sizes = ndimage.sum_labels(binary, labels, index=np.arange(1, count + 1))
    keep = int(np.argmax(sizes)) + 1
    return labels == keep


def _otsu_threshold(values: np.ndarray) -> float:
    """Classic two-class variance split over a 256-bin histogram."""
    hist, edges = np.histogram(values, bins=256, range=(0.0, float(values.max())))
    hist = hist.astype(np.float64)
    centers = (edges[:-1] + edges[1:]) / 2.0
    weight_lo = np.cumsum(hist)
    weight_hi = weight_lo[-1] - weight_lo
    mean_lo = np.cumsum(hist * centers) / np.maximum(weight_lo, 1e-12)
    total_mean = (hist * centers).sum() / weight_lo[-1]
    mean_hi = (total_mean * weight_lo[-1] - np.cumsum(hist * centers)) / np.maximum(
        weight_hi, 1e-12
    )
    between = weight_lo * weight_hi * np.square(mean_lo - mean_hi)
    return float(centers[np.argmax(between)])


def subject_pixels(image: np.ndarray) -> np.ndarray:
    """Boolean pixel mask of the dominant salient region."""
    h, w = image.shape[:2]
    band = max(1, round(0.04 * min(h, w)))
    border = np.concatenate(
        [
            image[:band].reshape(-1, 3),
            image[-band:].reshape(-1, 3),
            image[:, :band].reshape(-1, 3),
            image[:, -band:].reshape(-1, 3),
        ]
    )
    distance = np.linalg.norm(image - border.mean(axis=0), axis=2)
    distance = ndimage.uniform_filter(distance, size=3, mode="nearest")
    if distance.max() <= 1e-6:
        raise ImageError("no salient subject: image is uniform against its border")
    binary = distance >= _otsu_threshold(distance)
    if not binary.any():
        raise ImageError("no salient subject: saliency threshold left nothing")
    component = _largest_component(binary)
    return ndimage.binary_fill_holes(component)


def segment_subject(
    image: str | Path, prompt: str = "", grid: int = DEFAULT_GRID
) -> Mask:
    """Grid mask of the image's dominant subject.

    The reference segmenter is saliency-driven and ignores the prompt text;
    prompt-conditioned models slot in by replacing :func:`subject_pixels`.
    """
    del prompt  # recorded by callers, unused by the saliency reference
    return _grid_mask(subject_pixels(load_rgb(image)).astype(np.float64), int(grid))


def segment_point(
    image: str | Path, point: tuple[int, int], grid: int = DEFAULT_GRID
) -> list[Mask]:
    """Candidate grid masks around a clicked pixel, tight to loose.

    ``point`` is (x, y) in pixel coordinates. Each candidate is the connected
    color-tolerance region containing the click, projected to the grid with
    the click's cell forced on; candidates are nested (tight within loose).
    """
    pixels = load_rgb(image)
    h, w = pixels.shape[:2]
    x, y = int(point[0]), int(point[1])
    if not (0 <= x < w and 0 <= y < h):
        raise ImageError(f"point ({x}, {y}) outside image of size {w}x{h}")
    smooth = np.stack(
        [ndimage.uniform_filter(pixels[:, :, c], size=3, mode="nearest") for c in range(3)],
        axis=2,
    )
    seed_color = smooth[y, x]
    distance = np.linalg.norm(smooth - seed_color, axis=2)
    grid = int(grid)
    out: list[Mask] = []
    for tolerance in POINT_TOLERANCES:
        labels, _ = ndimage.label(distance <= tolerance)
        mask = _grid_mask((labels == labels[y, x]).astype(np.float64), grid)
        mask.bits[min(y * grid // h, grid - 1), min(x * grid // w, grid - 1)] = 1
        out.append(mask)
    return out


def write_masks(masks: list[Mask], prefix: str | Path) -> list[Path]:
    """Write candidate masks as ``{prefix}_cand{i}.mtgm``; returns the paths."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, mask in enumerate(masks):
        path = prefix.parent / f"{prefix.name}_cand{i}.mtgm"
        write_mask(mask, path)
        paths.append(path)
    return paths
