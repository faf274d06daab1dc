"""Exception hierarchy shared across the package."""


class UniSceneError(Exception):
    """Base class for all data/contract errors raised by this package."""


class GeometryError(UniSceneError):
    """Invalid geometric input (non-positive depth, bad rotation, ...)."""


class FrameMismatchError(UniSceneError):
    """A point cloud was used in a coordinate frame it does not belong to."""


class SceneGenerationError(UniSceneError):
    """Scene configuration cannot be realized (placement infeasible, ...)."""


class ShapeError(UniSceneError):
    """Tensor/array shape mismatch."""


class NonFiniteError(UniSceneError):
    """A NaN or Inf appeared where only finite values are allowed."""


class ConfigError(UniSceneError):
    """Malformed or inconsistent run configuration."""


class TrainingDivergedError(UniSceneError):
    """Training produced a non-finite loss or parameter update."""


class FormatError(UniSceneError):
    """Malformed binary file.  Carries the byte offset and what was expected."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UsageError(UniSceneError):
    """Bad command-line invocation."""
