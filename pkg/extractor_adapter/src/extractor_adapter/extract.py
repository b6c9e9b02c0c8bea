"""Feature export: run a backbone, write an interchange feature stack.

The emitted file is a plain MTGF container built through the matching
engine's own public writer, so anything the engine's ``validate`` subcommand
accepts as a stack is exactly what this module produces.
"""

from __future__ import annotations

from pathlib import Path

from vsmatch import FeatureStack, LayerBlock, write_stack

from .backbones import load_backbone
from .spec import ExtractionSpec


def extract_stack(spec: ExtractionSpec) -> FeatureStack:
    """Run the requested backbone and assemble the in-memory stack."""
    backbone = load_backbone(spec.backbone)
    features = backbone.extract(spec)
    blocks = [LayerBlock(layer_id, features[layer_id]) for layer_id in sorted(features)]
    stack = FeatureStack(spec.image_id(), blocks)
    stack.validate()
    return stack


def extract_features(spec: ExtractionSpec, dest: str | Path) -> Path:
    """Write the requested features as an MTGF file; returns the path."""
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    write_stack(extract_stack(spec), dest)
    return dest
