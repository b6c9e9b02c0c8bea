"""Backbone registry: who turns pixels into decoder features.

Layer ids are opaque to the matching engine, so each backbone must commit to
one numbering and document it. The convention here: decoder layers are the
resnet outputs of the upsampling path counted in forward order, 1-based.
For an SD-2.1-class UNet (4 up blocks x 3 resnets) that gives ids 1..12:

    layers  1-3   up block 0 (coarsest grid, widest channels)
    layers  4-6   up block 1      <- layer 6 is "the sixth decoder layer"
    layers  7-9   up block 2
    layers 10-12  up block 3 (finest grid, narrowest channels)

Every backbone resamples each exported layer to the requested output grid,
so downstream consumers always see (grid, grid, channels) blocks regardless
of a layer's native resolution.

The ``patch-pyramid`` backbone is a dependency-free reference implementation:
a fixed, seeded linear mixing of multiscale patch statistics that mimics the
coarse-to-fine geometry above (native grids 6/12/24/48, channel widths
48/32/16/8 per block). It exists so the whole toolchain runs and is testable
without GPU weights; swap in ``sd21`` on a machine with torch + diffusers
installed to export real features.
"""

from __future__ import annotations

import hashlib
from typing import Protocol

import numpy as np
from scipy import ndimage

from .errors import BackboneUnavailableError, UnsupportedLayerError
from .imageio import load_rgb, luminance, resize_plane, resize_rgb
from .spec import ExtractionSpec

# Decoder geometry shared by both backbones: 12 layers in 4 blocks of 3.
N_DECODER_LAYERS = 12
_BLOCK_OF = {k: (k - 1) // 3 for k in range(1, N_DECODER_LAYERS + 1)}
_NATIVE_GRID = (6, 12, 24, 48)
_CHANNELS = (48, 32, 16, 8)

# Positional channels appended to every exported layer, at this fraction of
# the content RMS. Real convolutional decoders acquire the same kind of
# absolute-position sensitivity from zero padding; here it also keeps the
# self-match sanity check well posed on locally flat images (two cells can
# share pixel statistics but never share a position code).
POSITION_AMPLITUDE = 0.05


def decoder_layer_table() -> dict[int, str]:
    """Layer id -> human-readable decoder location, for documentation."""
    return {
        k: f"up block {_BLOCK_OF[k]} resnet {(k - 1) % 3}"
        for k in range(1, N_DECODER_LAYERS + 1)
    }


class BackbonePort(Protocol):
    """What extract_features needs from a backbone."""

    name: str

    def layer_grid_channels(self, layer_id: int) -> tuple[int, int]:
        """Native (grid, channels) of one decoder layer; raises on bad ids."""
        ...

    def extract(self, spec: ExtractionSpec) -> dict[int, np.ndarray]:
        """Layer id -> float32 (spec.grid, spec.grid, channels) features."""
        ...


def _check_layer(name: str, layer_id: int) -> int:
    if not 1 <= layer_id <= N_DECODER_LAYERS:
        raise UnsupportedLayerError(
            f"backbone {name!r} has decoder layers 1..{N_DECODER_LAYERS}, "
            f"got {layer_id}"
        )
    return _BLOCK_OF[layer_id]


def _mixing_rng(name: str, layer_id: int, timestep: int, prompt: str) -> np.random.Generator:
    """Fixed per-(layer, timestep, prompt) generator for the mixing bank.

    The timestep and prompt condition the mixing the way they condition a
    real denoiser pass: same conditioning, same features, bit for bit.
    """
    material = f"{name}:v1:layer{layer_id}:t{timestep}:{prompt}".encode()
    digest = hashlib.sha256(material).digest()
    words = np.frombuffer(digest, dtype=np.uint64)
    return np.random.default_rng([int(w) for w in words])


class PatchPyramidBackbone:
    """Seeded multiscale patch statistics shaped like a decoder's output.

    Per layer: resample the image to 4x the layer's native grid, reduce each
    4x4 patch to 13 statistics (color mean/std, gradient energy, luminance
    extremes, neighborhood mean at the layer's receptive radius), mix them
    with a fixed seeded matrix to the layer's channel width, bilinearly
    resample to the output grid, and append the position code.
    """

    name = "patch-pyramid"

    def layer_grid_channels(self, layer_id: int) -> tuple[int, int]:
        block = _check_layer(self.name, layer_id)
        return _NATIVE_GRID[block], _CHANNELS[block] + 4

    def extract(self, spec: ExtractionSpec) -> dict[int, np.ndarray]:
        for layer_id in spec.layers:
            _check_layer(self.name, layer_id)
        image = load_rgb(spec.image)
        out: dict[int, np.ndarray] = {}
        for layer_id in spec.layers:
            content = self._layer_content(image, layer_id, spec)
            out[layer_id] = _with_position_code(content)
        return out

    def _layer_content(
        self, image: np.ndarray, layer_id: int, spec: ExtractionSpec
    ) -> np.ndarray:
        block = _check_layer(self.name, layer_id)
        native = _NATIVE_GRID[block]
        stats = _patch_statistics(image, native, radius=(layer_id - 1) % 3)
        mix = _mixing_rng(self.name, layer_id, spec.timestep, spec.prompt)
        weights = mix.standard_normal((stats.shape[2], _CHANNELS[block]))
        weights = (weights / np.sqrt(stats.shape[2])).astype(np.float32)
        mixed = stats.reshape(native * native, -1) @ weights
        mixed = mixed.reshape(native, native, -1)
        if native == spec.grid:
            return mixed
        return np.stack(
            [resize_plane(mixed[:, :, c], spec.grid, spec.grid) for c in range(mixed.shape[2])],
            axis=2,
        )


def _patch_statistics(image: np.ndarray, native: int, radius: int) -> np.ndarray:
    """13 raw statistics per native cell, float32 (native, native, 13)."""
    fine = 4 * native
    resized = resize_rgb(image, fine, fine)
    luma = luminance(resized)
    gy, gx = np.gradient(luma)

    def per_patch(plane: np.ndarray) -> np.ndarray:
        return plane.reshape(native, 4, native, 4).transpose(0, 2, 1, 3).reshape(
            native, native, 16
        )

    color = resized.reshape(native, 4, native, 4, 3).transpose(0, 2, 1, 3, 4).reshape(
        native, native, 16, 3
    )
    patch_luma = per_patch(luma)
    stats = [
        color.mean(axis=2),  # 3: mean color
        color.std(axis=2),  # 3: color spread
        per_patch(np.abs(gx)).mean(axis=2, keepdims=True),  # 1: horizontal detail
        per_patch(np.abs(gy)).mean(axis=2, keepdims=True),  # 1: vertical detail
        patch_luma.min(axis=2, keepdims=True),  # 1
        patch_luma.max(axis=2, keepdims=True),  # 1
    ]
    cell_mean = color.mean(axis=2)
    if radius > 0:
        size = 2 * radius + 1
        neighborhood = np.stack(
            [
                ndimage.uniform_filter(cell_mean[:, :, c], size=size, mode="nearest")
                for c in range(3)
            ],
            axis=2,
        )
    else:
        neighborhood = cell_mean
    stats.append(neighborhood)  # 3: context color at the receptive radius
    return np.concatenate(stats, axis=2).astype(np.float32)


def _with_position_code(content: np.ndarray) -> np.ndarray:
    grid = content.shape[0]
    centers = (np.arange(grid, dtype=np.float32) + 0.5) / grid
    xs = np.broadcast_to(centers[None, :], (grid, grid))
    ys = np.broadcast_to(centers[:, None], (grid, grid))
    code = np.stack(
        [np.sin(np.pi * xs), np.cos(np.pi * xs), np.sin(np.pi * ys), np.cos(np.pi * ys)],
        axis=2,
    )
    rms = float(np.sqrt(np.mean(np.square(content))))
    amplitude = POSITION_AMPLITUDE * rms if rms > 0 else 1.0
    return np.concatenate(
        [content, (amplitude * code).astype(np.float32)], axis=2
    ).astype(np.float32)


class Sd21Backbone:
    """Stable-Diffusion-2.1-class UNet decoder features via torch + diffusers.

    Requires torch, diffusers, and locally cached model weights; none of
    those ship with this package, so loading raises a clear error until the
    host environment provides them. The layer numbering a real
    implementation must honor is :func:`decoder_layer_table`.
    """

    name = "sd21"

    def __init__(self) -> None:
        try:
            import diffusers  # noqa: F401
            import torch  # noqa: F401
        except ImportError as exc:
            raise BackboneUnavailableError(
                "backbone 'sd21' needs torch and diffusers plus locally cached "
                "SD-2.1 weights; install them or use '--backbone patch-pyramid' "
                "for the dependency-free reference backbone"
            ) from exc
        raise BackboneUnavailableError(
            "backbone 'sd21' found torch/diffusers but this build does not "
            "bundle the weight-loading glue; register a BackbonePort for it "
            "via register_backbone()"
        )

    def layer_grid_channels(self, layer_id: int) -> tuple[int, int]:  # pragma: no cover
        _check_layer(self.name, layer_id)
        raise BackboneUnavailableError("backbone 'sd21' is not loaded")

    def extract(self, spec: ExtractionSpec) -> dict[int, np.ndarray]:  # pragma: no cover
        raise BackboneUnavailableError("backbone 'sd21' is not loaded")


_REGISTRY: dict[str, type] = {
    PatchPyramidBackbone.name: PatchPyramidBackbone,
    Sd21Backbone.name: Sd21Backbone,
}


def register_backbone(name: str, factory: type) -> None:
    """Add or replace a backbone; ``load_backbone(name)()`` must satisfy
    :class:`BackbonePort`."""
    _REGISTRY[str(name)] = factory


def backbone_names() -> list[str]:
    return sorted(_REGISTRY)


def load_backbone(name: str) -> BackbonePort:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise BackboneUnavailableError(
            f"unknown backbone {name!r}; registered: {', '.join(backbone_names())}"
        ) from None
    return factory()
