"""Exception types shared across the package."""


class GraphDenoiseError(Exception):
    """Base class for all package-specific failures."""


class InvalidInputError(GraphDenoiseError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateMatrixError(GraphDenoiseError):
    """A filter matrix cannot be normalized (non-positive row sum)."""


class NumericDivergenceError(GraphDenoiseError):
    """Non-finite values appeared during an iterative computation."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class ImageFormatError(GraphDenoiseError):
    """An image file is unreadable or in an unsupported format."""


class CliUsageError(GraphDenoiseError):
    """Bad command-line arguments or configuration."""
