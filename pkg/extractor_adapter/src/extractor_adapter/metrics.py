"""Perceptual distance between crops and whole-image embeddings.

``perceptual_distance`` is a multiscale pixel/texture difference: both crops
are resampled to a common frame and compared at four scales on color and on
gradient energy. Identical crops score exactly 0. A learned perceptual model
(LPIPS-style) plugs in upstream of the engine by replacing this function;
the call contract — two crop paths in, one nonnegative float out — stays.

``embed_image`` mirrors the backbone registry for image-level embeddings:
the ``moments-256`` reference embedder is a unit-normed bank of blockwise
color/texture moments; CLIP/DINO-class entries raise until their runtimes
are installed. Embeddings are emitted as one-column CSV readable with
``numpy.loadtxt`` and comparable with the engine's ``baseline_cosine``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import BackboneUnavailableError
from .imageio import load_rgb, luminance, resize_rgb

COMPARE_SIZE = 64
SCALES = (64, 32, 16, 8)


def _pyramid(image: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    frame = resize_rgb(image, COMPARE_SIZE, COMPARE_SIZE)
    levels = []
    for scale in SCALES:
        level = resize_rgb(frame, scale, scale)
        gy, gx = np.gradient(luminance(level))
        levels.append((level, np.hypot(gx, gy)))
    return levels


def perceptual_distance(crop_a: str | Path, crop_b: str | Path) -> float:
    """Symmetric multiscale difference of two image crops; 0 iff identical."""
    total = 0.0
    for (color_a, grad_a), (color_b, grad_b) in zip(
        _pyramid(load_rgb(crop_a)), _pyramid(load_rgb(crop_b))
    ):
        color_term = float(np.sqrt(np.mean(np.square(color_a - color_b))))
        grad_term = float(np.sqrt(np.mean(np.square(grad_a - grad_b))))
        total += 0.5 * color_term + 0.5 * grad_term
    return total / len(SCALES)


class MomentsEmbedder:
    """4x4 blockwise color/texture moments, 256 dims, unit norm."""

    name = "moments-256"
    dim = 256

    def embed(self, image: np.ndarray) -> np.ndarray:
        frame = resize_rgb(image, COMPARE_SIZE, COMPARE_SIZE)
        gy, gx = np.gradient(luminance(frame))
        planes = np.concatenate(
            [frame, np.abs(gx)[:, :, None], np.abs(gy)[:, :, None]], axis=2
        )
        block = COMPARE_SIZE // 4
        cells = planes.reshape(4, block, 4, block, 5).transpose(0, 2, 1, 3, 4)
        cells = cells.reshape(4, 4, block * block, 5)
        moments = np.concatenate(
            [
                cells.mean(axis=2),  # 5 per cell
                cells.std(axis=2),  # 5 per cell
                np.quantile(cells, 0.1, axis=2),  # 5 per cell
                cells.max(axis=2)[..., :1],  # 1 per cell
            ],
            axis=2,
        ).ravel().astype(np.float64)
        norm = float(np.linalg.norm(moments))
        if norm == 0:
            moments = np.zeros(self.dim)
            moments[0] = 1.0
            return moments
        return (moments / norm).astype(np.float64)


class ClipStubEmbedder:
    """Placeholder for a CLIP/DINO-class runtime; raises until one exists."""

    name = "clip-vit-b32"

    def __init__(self) -> None:
        raise BackboneUnavailableError(
            "embedder 'clip-vit-b32' needs a CLIP runtime with local weights; "
            "use 'moments-256' for the dependency-free reference embedder"
        )


_EMBEDDERS: dict[str, type] = {
    MomentsEmbedder.name: MomentsEmbedder,
    ClipStubEmbedder.name: ClipStubEmbedder,
}


def embedder_names() -> list[str]:
    return sorted(_EMBEDDERS)


def register_embedder(name: str, factory: type) -> None:
    _EMBEDDERS[str(name)] = factory


def embed_image(image: str | Path, model_id: str = MomentsEmbedder.name) -> np.ndarray:
    """Image-level embedding vector under the named model."""
    try:
        factory = _EMBEDDERS[model_id]
    except KeyError:
        raise BackboneUnavailableError(
            f"unknown embedder {model_id!r}; registered: {', '.join(embedder_names())}"
        ) from None
    return factory().embed(load_rgb(image))


def write_embedding(vector: np.ndarray, dest: str | Path) -> Path:
    """One value per line, full float64 round-trip precision."""
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(dest, np.asarray(vector, dtype=np.float64), fmt="%.17g")
    return dest
