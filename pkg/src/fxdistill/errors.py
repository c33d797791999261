"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, dimension mismatch, or malformed input data."""


class UsageError(RuntimeError):
    """An API was called out of order or on an unsuitable object."""


class SerializationError(ValueError):
    """A model/adapter file is unreadable, truncated, or version-incompatible."""


class RetrievalError(LookupError):
    """A named adapter is missing from a bank."""


class TrainingDiverged(RuntimeError):
    """A loss or gradient became non-finite during training."""
