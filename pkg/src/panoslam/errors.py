"""Exception hierarchy shared across the library."""


class PanoSlamError(Exception):
    """Base class for all library errors."""


class DegenerateConfigurationError(PanoSlamError):
    """Point-set alignment input is rank deficient (too few / collinear points)."""


class InvalidPointError(PanoSlamError):
    """A 3D point that cannot be projected (zero norm)."""


class PoleSingularityError(PanoSlamError):
    """Point lies on (or too close to) the vertical camera axis."""


class PixelBoundsError(PanoSlamError):
    """Pixel coordinates outside the image domain."""


class ImuStreamError(PanoSlamError):
    """Empty or non-monotonic IMU sample stream."""


class LowParallaxError(PanoSlamError):
    """Triangulation rays are too close to parallel (or share a center)."""


class InitializationError(PanoSlamError):
    """Two-view bootstrap failed (pure rotation / insufficient parallax); retry later."""


class InsufficientExcitationError(PanoSlamError):
    """Visual-inertial alignment is ill conditioned; carries the condition number."""

    def __init__(self, message, condition_number):
        super().__init__(f"{message} (condition number {condition_number:.3e})")
        self.condition_number = condition_number


class TrackingFailureError(PanoSlamError):
    """Too few inliers to estimate the current frame pose."""


class GraphDisconnectedError(PanoSlamError):
    """Pose graph has keyframes unreachable from the fixed node."""

    def __init__(self, unreachable):
        super().__init__(f"pose graph disconnected; unreachable keyframes: {sorted(unreachable)}")
        self.unreachable = sorted(unreachable)


class ConfigError(PanoSlamError):
    """Bad configuration file content; carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DatasetError(PanoSlamError):
    """Missing or inconsistent dataset stream."""
