"""Exception types shared across the package."""


class WideposeError(Exception):
    """Base class for all domain errors raised by this package."""


class NonPositiveDepthError(WideposeError):
    """A point lies at or behind the camera plane (depth <= epsilon)."""


class ZeroRayError(WideposeError):
    """A camera ray has (near-)zero norm and cannot define a projector."""


class OutOfBoundsError(WideposeError):
    """A cell or level lies outside the pyramid grid."""


class DegenerateHullError(WideposeError):
    """The convex hull of the supplied points has (near-)zero area."""


class NonPositiveSizeError(WideposeError):
    """An object size must be strictly positive."""


class DegenerateConfigurationError(WideposeError):
    """The correspondence set does not constrain a unique pose."""


class NoConsensusError(WideposeError):
    """Robust estimation could not find a sufficiently large inlier set."""


class NoDetectionError(WideposeError):
    """No cell exceeds the objectness threshold."""


class ObjectNotVisibleError(WideposeError):
    """The target does not project inside the image."""


class ZeroTranslationError(WideposeError):
    """The ground-truth translation has zero norm; normalized error undefined."""
