"""Exception types shared across the toolkit."""


class AngiocorrError(Exception):
    """Base class for all toolkit errors."""


# geometry

class GimbalLockError(AngiocorrError):
    """Optical axis is parallel to the reference up-vector; pose is undefined."""


class NonPositiveDepth(AngiocorrError):
    """A 3D point lies at or behind the camera plane."""


class IdenticalViews(AngiocorrError):
    """Two views share a camera center; no epipolar geometry exists."""


# phantom / dataset

class InvalidConfig(AngiocorrError):
    """A configuration value is outside its documented range."""


class OutOfFrustum(AngiocorrError):
    """A centerline point falls outside the camera frustum."""


class ManifestMissing(AngiocorrError):
    """Dataset directory has no manifest.json."""


class SchemaVersionMismatch(AngiocorrError):
    """Dataset manifest was written by an incompatible version."""


class DatasetNotFound(AngiocorrError):
    """Dataset path does not exist or is not a dataset."""


# curves

class DomainError(AngiocorrError):
    """Argument outside the mathematical domain of the operation."""


class DegenerateInput(AngiocorrError):
    """Input has no well-defined fit (too few points or zero chord length)."""


# tensornet

class ShapeMismatch(AngiocorrError):
    """Operand shapes are incompatible for the requested operation."""


class MissingGrad(AngiocorrError):
    """Optimizer step requested but a parameter has no gradient."""


# corrmodel

class WaypointSizeMismatch(AngiocorrError):
    """Waypoint length differs from the model's configured size."""


class WaypointUnavailable(AngiocorrError):
    """Query's branch context is too short to form a waypoint."""


class MissingModel(AngiocorrError):
    """An inference mode requires a checkpoint that is not loaded."""


class NonFiniteLoss(AngiocorrError):
    """Training aborted because the objective became NaN or infinite."""


class VersionMismatch(AngiocorrError):
    """Checkpoint version or task tag does not match the consumer."""


class CorruptFile(AngiocorrError):
    """Checkpoint file failed magic or length validation."""


# tracing

class SeedOutOfBounds(AngiocorrError):
    """A trace seed pixel lies outside the image."""
