"""Max-pooling dropout, probabilistic weighted pooling and a small numpy CNN stack."""

from mpdropout.errors import (
    ArchParseError,
    FormatError,
    GeometryError,
    ParameterError,
    PreconditionError,
    SizeError,
    TrainingDivergedError,
)

__version__ = "0.1.0"

__all__ = [
    "ArchParseError",
    "FormatError",
    "GeometryError",
    "ParameterError",
    "PreconditionError",
    "SizeError",
    "TrainingDivergedError",
]
