"""Exception hierarchy shared by the library and the CLI.

The CLI maps each class to a distinct exit code, so raising the right
type matters more than the message wording.
"""


class MivarselError(Exception):
    """Base class for all library errors."""


class ConfigError(MivarselError):
    """Invalid configuration or argument combination."""


class DataError(MivarselError):
    """Dataset loading or validation failure."""


class NumericalError(MivarselError):
    """A numerical procedure failed (singular system, divergence, ...)."""
