"""Exception types shared across the package."""


class GeomrepError(Exception):
    """Base class for all package-specific errors."""


class InvalidRotationError(GeomrepError, ValueError):
    """Matrix is not a proper rotation (orthonormal, det +1)."""


class BehindCameraError(GeomrepError, ValueError):
    """One or more joints have non-positive depth in the camera frame."""

    def __init__(self, joint_indices):
        self.joint_indices = list(joint_indices)
        super().__init__(f"joints behind camera (z <= 0): {self.joint_indices}")


class DegenerateGeometryError(GeomrepError, ValueError):
    """Camera configuration cannot support triangulation."""


class DegeneratePoseError(GeomrepError, ValueError):
    """Pose has no spatial extent (all joints coincident)."""


class DegenerateLatentError(GeomrepError, ValueError):
    """Latent code is all-zero and cannot be normalized."""


class ShapeMismatchError(GeomrepError, ValueError):
    """Operands have incompatible shapes."""


class ConfigError(GeomrepError, ValueError):
    """Invalid configuration value; carries the dotted field path."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class SampleRejectedError(GeomrepError, ValueError):
    """A generated sample violates visibility constraints."""


class DatasetIOError(GeomrepError, IOError):
    """Corrupt, truncated, or inconsistent dataset files."""


class MissingInputError(GeomrepError, FileNotFoundError):
    """A required input artifact (dataset, checkpoint) does not exist."""


class DependencyOrderError(GeomrepError, ValueError):
    """A pipeline stage was invoked before its prerequisite stage."""
