"""Bridge from pretrained vision backbones into the matching engine's
interchange formats: feature stacks, grid masks, repainted images, and
image-level embeddings."""

from .backbones import (
    BackbonePort,
    PatchPyramidBackbone,
    Sd21Backbone,
    backbone_names,
    decoder_layer_table,
    load_backbone,
    register_backbone,
)
from .edits import inpaint
from .errors import (
    AdapterError,
    BackboneUnavailableError,
    EditError,
    ImageError,
    UnsupportedLayerError,
)
from .extract import extract_features, extract_stack
from .metrics import (
    embed_image,
    embedder_names,
    perceptual_distance,
    register_embedder,
    write_embedding,
)
from .segment import segment_point, segment_subject, write_masks
from .spec import ExtractionSpec

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "BackbonePort",
    "BackboneUnavailableError",
    "EditError",
    "ExtractionSpec",
    "ImageError",
    "PatchPyramidBackbone",
    "Sd21Backbone",
    "UnsupportedLayerError",
    "backbone_names",
    "decoder_layer_table",
    "embed_image",
    "embedder_names",
    "extract_features",
    "extract_stack",
    "inpaint",
    "load_backbone",
    "perceptual_distance",
    "register_backbone",
    "register_embedder",
    "segment_point",
    "segment_subject",
    "write_embedding",
    "write_masks",
]
