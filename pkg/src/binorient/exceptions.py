"""Error types raised across the toolkit."""


class BinorientError(ValueError):
    """Base class for all toolkit errors."""


class InvalidInputError(BinorientError):
    """An argument violates a documented precondition."""


class InvalidGeometryError(BinorientError):
    """A scene or source/listener geometry is physically inconsistent."""


class EmptyFeaturesError(BinorientError):
    """A recording carries no usable signal for feature extraction."""
