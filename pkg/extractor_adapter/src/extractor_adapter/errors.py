"""Exception types for the adapter.

The CLI maps these onto exit codes: usage problems exit 1, everything that
goes wrong with images, models, or emitted files exits 2.
"""

from __future__ import annotations


class AdapterError(Exception):
    """Base class for all adapter errors."""


class BackboneUnavailableError(AdapterError):
    """The requested backbone (or embedder) needs packages or weights that
    are not installed on this machine."""


class UnsupportedLayerError(AdapterError):
    """A requested layer id does not map to a decoder block of the chosen
    backbone."""


class ImageError(AdapterError):
    """An input image is missing, unreadable, or unusable for the op."""


class EditError(AdapterError):
    """An inpainting request is invalid (for example an empty mask)."""
