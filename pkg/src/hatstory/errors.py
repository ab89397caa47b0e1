"""Exception types shared across the package."""


class HatstoryError(Exception):
    """Base class for every error this package raises on purpose."""


class DimensionError(HatstoryError, ValueError):
    """Operand shapes do not line up."""


class NumericDomainError(HatstoryError, ValueError):
    """Math outside the representable/defined domain (log of 0, overflow, NaN)."""


class ContractError(HatstoryError, ValueError):
    """A documented precondition was violated by the caller."""


class StateError(HatstoryError, RuntimeError):
    """Operation invoked in an invalid object state (e.g. replaying a spent tape)."""


class DeterminismError(HatstoryError, RuntimeError):
    """A function expected to be pure returned different values on repeat evaluation."""


class ConfigurationError(HatstoryError, ValueError):
    """Invalid configuration value or combination."""


class DataError(HatstoryError, ValueError):
    """Malformed dataset content; message carries the offending location."""


class FormatError(HatstoryError, ValueError):
    """A serialized artifact does not follow its documented layout."""


class CorruptionError(HatstoryError, ValueError):
    """A serialized artifact is structurally valid but its content is damaged."""
