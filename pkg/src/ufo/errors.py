"""Exception types shared across the package."""


class UFOError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(UFOError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigError(UFOError):
    """A configuration value violates a structural constraint."""


class DataError(UFOError):
    """Input data (labels, masks, files) violates its contract."""


class ManifestError(UFOError):
    """A dataset manifest is malformed or inconsistent."""


class GenerationError(UFOError):
    """Synthetic data generation could not satisfy its postconditions."""


class CheckpointError(UFOError):
    """A checkpoint file is malformed or incompatible."""
