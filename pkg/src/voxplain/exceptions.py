"""Exception types raised across voxplain."""


class VoxplainError(Exception):
    """Base class for all voxplain errors."""


class ShapeError(VoxplainError, ValueError):
    """Raised when grid or tensor dimensions are inconsistent."""


class NonFiniteError(VoxplainError, FloatingPointError):
    """Raised when a computation produces NaN or infinity.

    Attributes
    ----------
    layer : str or None
        Name of the layer whose output was not finite, if known.
    """

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class ArchitectureError(VoxplainError, ValueError):
    """Raised when a method is applied to an unsupported model graph."""


class DataError(VoxplainError, ValueError):
    """Raised for malformed files or datasets that cannot be used."""
