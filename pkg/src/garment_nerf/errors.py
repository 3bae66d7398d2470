class GarmentNerfError(Exception):
    """Base class for package errors."""


class ConfigurationError(GarmentNerfError, ValueError):
    """Invalid configuration, shapes or sizes supplied by the caller."""


class DomainError(GarmentNerfError, ValueError):
    """Input outside an operation's domain (empty mesh, bad index, ...)."""


class UsageError(GarmentNerfError, RuntimeError):
    """An object used in a state that forbids the call."""


class TrainingAborted(GarmentNerfError, RuntimeError):
    """Non-finite loss or similar; training stopped."""
