"""Shared exception types."""


class DatforgeError(Exception):
    """Base class for all package errors."""


class DimensionError(DatforgeError, ValueError):
    """Tensor shapes do not conform."""


class ConfigError(DatforgeError, ValueError):
    """Invalid configuration value or combination."""


class FormatError(DatforgeError, ValueError):
    """File content violates an expected on-disk format."""


class PolicyError(DatforgeError, RuntimeError):
    """An access rule was violated (e.g. reading hidden labels outside the oracle path)."""
