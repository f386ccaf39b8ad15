"""
Error Types
===========
Exception hierarchy shared by the pipeline, codec, simulator and CLI.
Each error also derives from the builtin it refines so callers can keep
catching ValueError / RuntimeError.
"""

from typing import Optional


class FadeLeadError(Exception):
    """Base class for all engine errors"""


class ShapeMismatchError(FadeLeadError, ValueError):
    """Grid, mask or parameter dimensions do not agree"""


class NonFiniteError(FadeLeadError, ValueError):
    """A grid or parameter holds NaN or infinity"""


class InsufficientCellsError(FadeLeadError, ValueError):
    """Top-k asked for more cells than are eligible"""


class MalformedMessageError(FadeLeadError, ValueError):
    """Wire bytes do not decode to a valid sparse message"""


class IndexOrderError(MalformedMessageError):
    """Cell indices are not strictly ascending"""


class SceneGenerationError(FadeLeadError, RuntimeError):
    """Scene placement did not succeed within the retry bound"""


class ConfigError(FadeLeadError, ValueError):
    """Invalid experiment configuration"""

    def __init__(self, message: str, field_path: Optional[str] = None):
        self.field_path = field_path
        prefix = f"{field_path}: " if field_path else ""
        super().__init__(f"{prefix}{message}")
