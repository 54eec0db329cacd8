"""Mutual-information variable selection and nonlinear calibration models."""

from .errors import ConfigError, DataError, MivarselError, NumericalError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "MivarselError",
    "NumericalError",
    "__version__",
]
