"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`WheezeNMFError`, so callers can catch the whole family at once. The
concrete classes also derive from the closest builtin so that generic
``except ValueError`` handlers keep working.
"""


class WheezeNMFError(Exception):
    """Base class for all package errors."""


class InvalidInputError(WheezeNMFError, ValueError):
    """Input data violates an operation's preconditions."""


class ConfigurationError(WheezeNMFError, ValueError):
    """A configuration object was built with inconsistent parameters."""


class NumericalError(WheezeNMFError, ArithmeticError):
    """A non-finite value appeared during an iterative computation."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class WavFormatError(WheezeNMFError, ValueError):
    """A WAV file uses an encoding or layout this package cannot read."""

    def __init__(self, message, chunk_id=None):
        if chunk_id is not None:
            message = f"{message} [chunk {chunk_id!r}]"
        super().__init__(message)
        self.chunk_id = chunk_id
