"""Shared fixtures: five deterministic textured sample images.

Each image has structure at several scales (so features are distinctive)
and a center-dominant subject (so the saliency segmenter has something to
find). Two of them place the subject at an analytically known footprint
(see sample_geometry) so segmentation tests can score overlap instead of
just non-emptiness.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from sample_geometry import DISC_CENTER, DISC_RADIUS, SIZE, SQUARE_X, SQUARE_Y


def _coords() -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float32)
    return xx, yy


def _speckle(img: np.ndarray, rng: np.random.Generator, sigma: float) -> np.ndarray:
    return np.clip(img + rng.normal(0.0, sigma, img.shape).astype(np.float32), 0.0, 1.0)


def _blobs() -> np.ndarray:
    xx, yy = _coords()
    img = np.stack([xx / SIZE, yy / SIZE, 0.5 + 0.0 * xx], axis=2)
    for cx, cy, r, color in [(60, 72, 26, (0.9, 0.2, 0.1)), (132, 120, 36, (0.1, 0.8, 0.3))]:
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * r * r))[:, :, None]
        img = img * (1.0 - blob) + blob * np.array(color, dtype=np.float32)
    return _speckle(img, np.random.default_rng(10), 0.03)


def _disc() -> np.ndarray:
    xx, yy = _coords()
    checker = (((xx // 24) + (yy // 24)) % 2) * 0.10 + 0.45
    img = np.stack([checker, checker, checker], axis=2)
    inside = (xx - DISC_CENTER[0]) ** 2 + (yy - DISC_CENTER[1]) ** 2 <= DISC_RADIUS**2
    img[inside] = np.array([0.95, 0.85, 0.2], dtype=np.float32)
    return _speckle(img, np.random.default_rng(11), 0.02)


def _stripes_square() -> np.ndarray:
    xx, yy = _coords()
    stripes = 0.5 + 0.18 * np.sin((xx + yy) / 8.0)
    img = np.stack([stripes * 0.5, stripes * 0.7, stripes], axis=2)
    img[SQUARE_Y[0] : SQUARE_Y[1], SQUARE_X[0] : SQUARE_X[1]] = np.array(
        [0.85, 0.15, 0.2], dtype=np.float32
    )
    return _speckle(img, np.random.default_rng(12), 0.02)


def _patches() -> np.ndarray:
    rng = np.random.default_rng(13)
    coarse = rng.random((8, 8, 3)).astype(np.float32) * 0.5 + 0.3
    img = np.stack(
        [
            np.asarray(
                Image.fromarray(coarse[:, :, c], mode="F").resize(
                    (SIZE, SIZE), resample=Image.Resampling.BILINEAR
                )
            )
            for c in range(3)
        ],
        axis=2,
    )
    xx, yy = _coords()
    ellipse = ((xx - 96) / 54.0) ** 2 + ((yy - 108) / 36.0) ** 2 <= 1.0
    img[ellipse] *= 0.25
    return _speckle(img, rng, 0.02)


def _rings() -> np.ndarray:
    xx, yy = _coords()
    r = np.hypot(xx - 91.0, yy - 101.0)
    rings = 0.5 + 0.3 * np.sin(r / 7.0)
    img = np.stack([rings, rings * 0.9, rings * 0.8], axis=2)
    img[125:163, 24:62] = np.array([0.9, 0.9, 0.95], dtype=np.float32)
    corner = np.hypot(xx - SIZE, yy) / (1.5 * SIZE)
    img *= (1.0 - 0.3 * corner)[:, :, None]
    return _speckle(img, np.random.default_rng(14), 0.02)


_BUILDERS = (_blobs, _disc, _stripes_square, _patches, _rings)


@pytest.fixture(scope="session")
def sample_images(tmp_path_factory: pytest.TempPathFactory) -> list[Path]:
    root = tmp_path_factory.mktemp("samples")
    paths = []
    for i, build in enumerate(_BUILDERS):
        path = root / f"sample{i}.png"
        Image.fromarray((build() * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(path)
        paths.append(path)
    return paths


@pytest.fixture(scope="session")
def disc_image(sample_images: list[Path]) -> Path:
    return sample_images[1]


@pytest.fixture(scope="session")
def square_image(sample_images: list[Path]) -> Path:
    return sample_images[2]
