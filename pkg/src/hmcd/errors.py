"""Exception types raised across the package."""


class HMCDError(Exception):
    """Base class for all package errors."""


class ContractError(HMCDError, ValueError):
    """An input violates a documented precondition."""


class DegenerateProjectionError(HMCDError, ValueError):
    """A point lies (numerically) on the camera's principal plane."""


class InvalidDepthError(HMCDError, ValueError):
    pass


class DegenerateOrientationError(HMCDError, ValueError):
    pass


class ShapeError(HMCDError, ValueError):
    """Tensor shapes do not satisfy a module's contract."""


class SchemaError(HMCDError, ValueError):
    """A config, map, manifest or label file does not match its schema."""


class CheckpointMismatchError(HMCDError):
    pass


class TrainingDivergedError(HMCDError, RuntimeError):
    pass
