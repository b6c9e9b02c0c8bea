"""Exception types shared across the engine.

The CLI maps these onto exit codes: usage problems exit 1, data/format
problems exit 2, non-finite numerics exit 3.
"""

from __future__ import annotations


class VsmatchError(Exception):
    """Base class for all engine errors."""


class FormatError(VsmatchError):
    """A byte container does not conform to its declared layout."""


class TruncationError(FormatError):
    """A byte container ends before its declared payload does."""


class NonFiniteError(VsmatchError):
    """A NaN or Inf showed up where only finite values are allowed."""


class IntegrityError(VsmatchError):
    """A record or artifact violates a cross-field invariant."""


class PortError(VsmatchError):
    """A pluggable segmenter/inpainter/perceptual backend failed."""
