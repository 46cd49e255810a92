"""LaUD single-image super-resolution on a from-scratch numpy autodiff engine."""

from .errors import ConfigError, DataError, DimensionError, FormatError, GeometryError, NumericError, StateError
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DimensionError",
    "FormatError",
    "GeometryError",
    "NumericError",
    "StateError",
    "Tensor",
]
