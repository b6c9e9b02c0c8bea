"""Extraction request description.

One :class:`ExtractionSpec` says everything needed to reproduce a feature
export: which image, which backbone, which decoder layers, at what diffusion
timestep, under what prompt, onto what output grid. Two equal requests must
produce byte-identical files, so an ExtractionSpec is also the unit of
determinism.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import AdapterError

DEFAULT_BACKBONE = "sd21"
DEFAULT_LAYERS = (5, 6, 8)
DEFAULT_GRID = 48
# Timestep 0 selects the distilled single-pass extraction style; backbones
# that run a noised denoiser pass interpret positive values as that pass's
# diffusion timestep. Configurable, never hard-coded into a backbone.
DEFAULT_TIMESTEP = 0


@dataclass
class ExtractionSpec:
    """What to extract: image, backbone, decoder layers, conditioning."""

    image: str | Path
    backbone: str = DEFAULT_BACKBONE
    timestep: int = DEFAULT_TIMESTEP
    layers: tuple[int, ...] = DEFAULT_LAYERS
    grid: int = DEFAULT_GRID
    prompt: str = ""

    def __post_init__(self) -> None:
        self.image = Path(self.image)
        self.layers = tuple(sorted({int(layer) for layer in self.layers}))
        if not self.layers:
            raise AdapterError("extraction spec needs at least one layer id")
        self.grid = int(self.grid)
        if self.grid < 2:
            raise AdapterError(f"output grid must be at least 2, got {self.grid}")
        self.timestep = int(self.timestep)
        if self.timestep < 0:
            raise AdapterError(f"diffusion timestep must be >= 0, got {self.timestep}")

    def image_id(self) -> str:
        """Identifier recorded in the emitted stack: the image's stem."""
        return self.image.stem
